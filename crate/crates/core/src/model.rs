//! Object identifiers, decoded values and the in-memory property domain graph.
//!
//! Every object is an 8-byte identifier whose high byte is a class tag and
//! whose low 56 bits carry the class-specific payload. Comparing two raw
//! identifiers as `u64` therefore orders them by `(tag, payload)`, which is
//! exactly the key order of every B+ tree in the storage layer.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub const PAYLOAD_BITS: u32 = 56;
pub const PAYLOAD_MASK: u64 = (1 << PAYLOAD_BITS) - 1;
pub const INLINE_STRING_MAX: usize = 7;
pub const INT_MIN: i64 = -(1 << 55);
pub const INT_MAX: i64 = (1 << 55) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Tag {
    NamedNode = 0x01,
    AnonNode = 0x02,
    Edge = 0x03,
    InlineString = 0x04,
    InlineInt = 0x05,
    ExternalString = 0x06,
}

impl Tag {
    pub fn from_byte(b: u8) -> Option<Tag> {
        Some(match b {
            0x01 => Tag::NamedNode,
            0x02 => Tag::AnonNode,
            0x03 => Tag::Edge,
            0x04 => Tag::InlineString,
            0x05 => Tag::InlineInt,
            0x06 => Tag::ExternalString,
            _ => return None,
        })
    }

    pub fn is_value(self) -> bool {
        matches!(
            self,
            Tag::InlineString | Tag::InlineInt | Tag::ExternalString
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(u64);

impl ObjectId {
    /// Builds an id from a tag and a payload that must fit in 56 bits.
    pub fn new(tag: Tag, payload: u64) -> ObjectId {
        debug_assert!(payload <= PAYLOAD_MASK, "payload {payload:#x} exceeds 56 bits");
        ObjectId(((tag as u64) << PAYLOAD_BITS) | (payload & PAYLOAD_MASK))
    }

    pub fn from_raw(raw: u64) -> Result<ObjectId> {
        match Tag::from_byte((raw >> PAYLOAD_BITS) as u8) {
            Some(_) => Ok(ObjectId(raw)),
            None => Err(Error::Corruption(format!("invalid object id {raw:#018x}"))),
        }
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn tag(self) -> Tag {
        Tag::from_byte((self.0 >> PAYLOAD_BITS) as u8).expect("ObjectId carries a valid tag")
    }

    pub fn payload(self) -> u64 {
        self.0 & PAYLOAD_MASK
    }

    pub fn named(offset: u64) -> ObjectId {
        ObjectId::new(Tag::NamedNode, offset)
    }

    pub fn anon(n: u64) -> ObjectId {
        ObjectId::new(Tag::AnonNode, n)
    }

    pub fn edge(n: u64) -> ObjectId {
        ObjectId::new(Tag::Edge, n)
    }

    pub fn external(offset: u64) -> ObjectId {
        ObjectId::new(Tag::ExternalString, offset)
    }

    pub fn inline_int(value: i64) -> Result<ObjectId> {
        if !(INT_MIN..=INT_MAX).contains(&value) {
            return Err(Error::Overflow(value));
        }
        Ok(ObjectId::new(Tag::InlineInt, (value as u64) & PAYLOAD_MASK))
    }

    /// Inlines a string of at most seven bytes, big-endian and zero padded, so
    /// that payload order equals bytewise content order.
    pub fn inline_str(s: &str) -> Option<ObjectId> {
        let bytes = s.as_bytes();
        if bytes.len() > INLINE_STRING_MAX || bytes.contains(&0) {
            return None;
        }
        let mut buf = [0u8; 8];
        buf[1..1 + bytes.len()].copy_from_slice(bytes);
        Some(ObjectId::new(Tag::InlineString, u64::from_be_bytes(buf)))
    }

    pub fn is_edge(self) -> bool {
        self.tag() == Tag::Edge
    }

    fn inline_int_value(self) -> i64 {
        // sign-extend the 56-bit payload
        ((self.payload() << 8) as i64) >> 8
    }

    fn inline_str_bytes(self) -> Vec<u8> {
        let buf = self.payload().to_be_bytes();
        let body = &buf[1..];
        let len = body.iter().position(|&b| b == 0).unwrap_or(body.len());
        body[..len].to_vec()
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match Tag::from_byte((self.0 >> PAYLOAD_BITS) as u8) {
            Some(tag) => write!(f, "{:?}({})", tag, self.payload()),
            None => write!(f, "Invalid({:#018x})", self.0),
        }
    }
}

/// A raw user value before encoding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Str(String),
    Int(i64),
}

/// A decoded object, used for display and for value comparisons.
///
/// The derived order is the value order used by WHERE comparisons and
/// ORDER BY: named nodes, anonymous nodes, edges, strings, integers; names and
/// strings compare bytewise, numbers numerically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Datum {
    Named(String),
    Anon(u64),
    Edge(u64),
    Str(String),
    Int(i64),
}

impl fmt::Display for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Datum::Named(name) => f.write_str(name),
            Datum::Anon(n) => write!(f, "_a{n}"),
            Datum::Edge(n) => write!(f, "_e{n}"),
            Datum::Str(s) => f.write_str(s),
            Datum::Int(i) => write!(f, "{i}"),
        }
    }
}

/// Read access to external strings and node names.
pub trait Resolver {
    fn resolve_str(&self, offset: u64) -> Result<Cow<'_, str>>;
    /// Offset of an already interned string, without inserting it.
    fn lookup_str(&self, s: &str) -> Option<u64>;
}

pub trait Interner: Resolver {
    fn intern(&mut self, s: &str) -> Result<u64>;
}

fn check_no_nul(s: &str) -> Result<()> {
    if s.as_bytes().contains(&0) {
        Err(Error::NulInString)
    } else {
        Ok(())
    }
}

pub fn encode_value(raw: &Value, interner: &mut impl Interner) -> Result<ObjectId> {
    match raw {
        Value::Int(i) => ObjectId::inline_int(*i),
        Value::Str(s) => {
            check_no_nul(s)?;
            match ObjectId::inline_str(s) {
                Some(id) => Ok(id),
                None => Ok(ObjectId::external(interner.intern(s)?)),
            }
        }
    }
}

pub fn encode_named(name: &str, interner: &mut impl Interner) -> Result<ObjectId> {
    check_no_nul(name)?;
    Ok(ObjectId::named(interner.intern(name)?))
}

/// Encodes a value without interning; `None` when the value is a long string
/// that the store has never seen (and hence matches no object).
pub fn lookup_value(raw: &Value, resolver: &(impl Resolver + ?Sized)) -> Option<ObjectId> {
    match raw {
        Value::Int(i) => ObjectId::inline_int(*i).ok(),
        Value::Str(s) => {
            if s.as_bytes().contains(&0) {
                return None;
            }
            ObjectId::inline_str(s)
                .or_else(|| resolver.lookup_str(s).map(ObjectId::external))
        }
    }
}

pub fn lookup_named(name: &str, resolver: &(impl Resolver + ?Sized)) -> Option<ObjectId> {
    resolver.lookup_str(name).map(ObjectId::named)
}

/// The object a decoded value denotes, if the store knows it.
pub fn lookup_datum(d: &Datum, resolver: &(impl Resolver + ?Sized)) -> Option<ObjectId> {
    match d {
        Datum::Named(n) => lookup_named(n, resolver),
        Datum::Anon(n) => (*n <= PAYLOAD_MASK).then(|| ObjectId::anon(*n)),
        Datum::Edge(n) => (*n <= PAYLOAD_MASK).then(|| ObjectId::edge(*n)),
        Datum::Str(s) => lookup_value(&Value::Str(s.clone()), resolver),
        Datum::Int(i) => lookup_value(&Value::Int(*i), resolver),
    }
}

pub fn decode_value(id: ObjectId, resolver: &(impl Resolver + ?Sized)) -> Result<Value> {
    match id.tag() {
        Tag::InlineInt => Ok(Value::Int(id.inline_int_value())),
        Tag::InlineString => String::from_utf8(id.inline_str_bytes())
            .map(Value::Str)
            .map_err(|_| Error::Corruption(format!("inline string {id:?} is not UTF-8"))),
        Tag::ExternalString => Ok(Value::Str(resolver.resolve_str(id.payload())?.into_owned())),
        _ => Err(Error::NotAValue(format!("{id:?}"))),
    }
}

pub fn decode(id: ObjectId, resolver: &(impl Resolver + ?Sized)) -> Result<Datum> {
    Ok(match id.tag() {
        Tag::NamedNode => Datum::Named(resolver.resolve_str(id.payload())?.into_owned()),
        Tag::AnonNode => Datum::Anon(id.payload()),
        Tag::Edge => Datum::Edge(id.payload()),
        _ => match decode_value(id, resolver)? {
            Value::Str(s) => Datum::Str(s),
            Value::Int(i) => Datum::Int(i),
        },
    })
}

/// Append-only arena of length-prefixed strings with an intern table.
///
/// The byte layout is the ObjectFile layout: each entry is a little-endian
/// `u32` length followed by the UTF-8 bytes, and an entry's offset is the
/// position of its length prefix.
#[derive(Debug, Default, Clone)]
pub struct StringArena {
    bytes: Vec<u8>,
    index: HashMap<Box<str>, u64>,
    entries: usize,
}

impl StringArena {
    pub fn new() -> StringArena {
        StringArena::default()
    }

    /// Rebuilds the intern table from raw ObjectFile bytes.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<StringArena> {
        let mut index = HashMap::new();
        let mut pos = 0usize;
        let mut entries = 0;
        while pos < bytes.len() {
            let (s, next) = read_entry(&bytes, pos)?;
            index.insert(s.into(), pos as u64);
            pos = next;
            entries += 1;
        }
        Ok(StringArena {
            bytes,
            index,
            entries,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }
}

fn read_entry(bytes: &[u8], pos: usize) -> Result<(&str, usize)> {
    let corrupt = || Error::Corruption(format!("no string entry at offset {pos}"));
    let header = bytes.get(pos..pos + 4).ok_or_else(corrupt)?;
    let len = u32::from_le_bytes(header.try_into().unwrap()) as usize;
    let body = bytes.get(pos + 4..pos + 4 + len).ok_or_else(corrupt)?;
    let s = std::str::from_utf8(body).map_err(|_| corrupt())?;
    Ok((s, pos + 4 + len))
}

impl Resolver for StringArena {
    fn resolve_str(&self, offset: u64) -> Result<Cow<'_, str>> {
        let pos = usize::try_from(offset)
            .map_err(|_| Error::Corruption(format!("offset {offset} out of range")))?;
        let (s, _) = read_entry(&self.bytes, pos)?;
        // an offset inside an entry can still parse; require an exact entry start
        if self.index.get(s) != Some(&offset) {
            return Err(Error::Corruption(format!("no string entry at offset {offset}")));
        }
        Ok(Cow::Borrowed(s))
    }

    fn lookup_str(&self, s: &str) -> Option<u64> {
        self.index.get(s).copied()
    }
}

impl Interner for StringArena {
    fn intern(&mut self, s: &str) -> Result<u64> {
        if let Some(&offset) = self.index.get(s) {
            return Ok(offset);
        }
        let offset = self.bytes.len() as u64;
        let len = u32::try_from(s.len())
            .map_err(|_| Error::Unsupported("strings longer than 4 GiB".into()))?;
        if offset + 4 + s.len() as u64 > PAYLOAD_MASK {
            return Err(Error::Unsupported("object file exceeds 56-bit offsets".into()));
        }
        self.bytes.extend_from_slice(&len.to_le_bytes());
        self.bytes.extend_from_slice(s.as_bytes());
        self.index.insert(s.into(), offset);
        self.entries += 1;
        Ok(offset)
    }
}

/// The reference (in-memory) form of a property domain graph.
#[derive(Debug, Default, Clone)]
pub struct PropertyDomainGraph {
    pub objects: BTreeSet<ObjectId>,
    pub gamma: BTreeMap<ObjectId, (ObjectId, ObjectId, ObjectId)>,
    pub labels: BTreeMap<ObjectId, BTreeSet<ObjectId>>,
    pub props: BTreeMap<(ObjectId, ObjectId), ObjectId>,
    pub strings: StringArena,
}

/// Builds the reference graph, numbering edges consecutively from zero in
/// input order.
pub fn build_reference_graph(
    edges: &[(ObjectId, ObjectId, ObjectId)],
    labels: &[(ObjectId, ObjectId)],
    props: &[(ObjectId, ObjectId, ObjectId)],
    strings: StringArena,
) -> Result<PropertyDomainGraph> {
    let mut g = PropertyDomainGraph {
        strings,
        ..Default::default()
    };
    for (n, &(s, t, o)) in edges.iter().enumerate() {
        let eid = ObjectId::edge(n as u64);
        g.gamma.insert(eid, (s, t, o));
        g.objects.extend([eid, s, t, o]);
    }
    for &(object, label) in labels {
        g.labels.entry(object).or_default().insert(label);
        g.objects.extend([object, label]);
    }
    for &(object, key, value) in props {
        match g.props.get(&(object, key)) {
            Some(&existing) if existing != value => {
                return Err(Error::PropertyConflict {
                    object: display_id(object, &g.strings),
                    key: display_id(key, &g.strings),
                })
            }
            _ => {
                g.props.insert((object, key), value);
            }
        }
        g.objects.extend([object, key, value]);
    }
    Ok(g)
}

pub(crate) fn display_id(id: ObjectId, resolver: &(impl Resolver + ?Sized)) -> String {
    decode(id, resolver)
        .map(|d| d.to_string())
        .unwrap_or_else(|_| format!("{id:?}"))
}

impl PropertyDomainGraph {
    pub fn prop(&self, object: ObjectId, key: ObjectId) -> Option<ObjectId> {
        self.props.get(&(object, key)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.gamma.len()
    }

    pub fn label_count(&self) -> usize {
        self.labels.values().map(BTreeSet::len).sum()
    }
}
