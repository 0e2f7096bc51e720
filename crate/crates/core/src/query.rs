//! Compiling, planning and running a query in one call.

use crate::algebra::{Row, SolutionSequence};
use crate::dgql::{compile, Sel};
use crate::error::Result;
use crate::exec::sort::DEFAULT_SORT_BUDGET;
use crate::exec::{Execution, Stats};
use crate::plan::{plan_query, Estimator, PhysicalPlan, Strategy};
use crate::storage::Database;

#[derive(Debug, Clone, Copy)]
pub struct QueryOptions {
    pub strategy: Strategy,
    /// Fail instead of falling back when the forced strategy cannot run.
    pub strict: bool,
    /// Overrides the query's LIMIT when set.
    pub limit: Option<u64>,
    /// Rows sorted in memory before spilling to disk.
    pub sort_budget: usize,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            strategy: Strategy::Auto,
            strict: false,
            limit: None,
            sort_budget: DEFAULT_SORT_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub solutions: SolutionSequence,
    pub stats: Stats,
    /// Plan text for EXPLAIN queries; no rows are produced then.
    pub explain: Option<String>,
    /// Planner fallbacks, such as leapfrog replaced by nested loops.
    pub notes: Vec<String>,
}

pub fn plan(db: &Database, text: &str, opts: &QueryOptions) -> Result<(PhysicalPlan, bool)> {
    let q = compile(text)?;
    let est = Estimator {
        catalog: db.catalog(),
        resolver: db,
    };
    let mut plan = plan_query(&q, est, opts.strategy, opts.strict)?;
    if opts.limit.is_some() {
        plan.limit = opts.limit;
    }
    Ok((plan, q.explain))
}

pub fn run_query(db: &Database, text: &str, opts: &QueryOptions) -> Result<QueryOutput> {
    let (plan, explain) = plan(db, text, opts)?;
    let columns = plan.select.iter().map(Sel::column_name).collect();
    if explain {
        return Ok(QueryOutput {
            solutions: SolutionSequence {
                columns,
                rows: Vec::new(),
            },
            stats: Stats::default(),
            explain: Some(plan.explain()),
            notes: plan.notes.clone(),
        });
    }
    let mut exec = Execution::new(db, &plan, opts.sort_budget);
    let rows: Vec<Row> = exec.collect_rows()?;
    Ok(QueryOutput {
        solutions: SolutionSequence { columns, rows },
        stats: exec.stats(),
        explain: None,
        notes: plan.notes.clone(),
    })
}
