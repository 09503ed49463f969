//! Embedded record store.
//!
//! Each record family is an append-only log of commit lines plus an ordered
//! in-memory index. A commit line is `<crc32 hex> <json ops>\n`; the checksum
//! covers the JSON payload. A trailing line without its newline is an
//! uncommitted (torn) write and is truncated on open. A complete line whose
//! checksum does not match marks its keys corrupt: reading them returns
//! [`Error::Corrupt`].
//!
//! Writers are serialized per family by a write lock; readers take the read
//! lock and copy values out, so they always observe committed state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Users,
    Sessions,
    Entries,
    Goals,
    States,
    Examples,
    Prompts,
    Turns,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Users,
        Family::Sessions,
        Family::Entries,
        Family::Goals,
        Family::States,
        Family::Examples,
        Family::Prompts,
        Family::Turns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Users => "users",
            Family::Sessions => "sessions",
            Family::Entries => "entries",
            Family::Goals => "goals",
            Family::States => "states",
            Family::Examples => "examples",
            Family::Prompts => "prompts",
            Family::Turns => "turns",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Whether each commit is fsynced before returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    Sync,
    Flush,
}

#[derive(Debug, Clone)]
enum Slot {
    Ok(String),
    Corrupt,
}

#[derive(Serialize, Deserialize)]
struct Op {
    k: String,
    v: Option<serde_json::Value>,
}

struct FamilyData {
    family: Family,
    map: BTreeMap<String, Slot>,
    file: Option<File>,
}

impl FamilyData {
    fn read(&self, key: &str) -> Result<Option<&str>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Slot::Ok(json)) => Ok(Some(json)),
            Some(Slot::Corrupt) => Err(Error::Corrupt {
                family: self.family.name().into(),
                key: key.into(),
            }),
        }
    }
}

pub struct Store {
    dir: Option<PathBuf>,
    durability: Durability,
    families: HashMap<Family, RwLock<FamilyData>>,
}

const SEQ_KEY: &str = "~seq";

impl Store {
    /// Volatile store for tests and dry runs.
    pub fn in_memory() -> Store {
        let families = Family::ALL
            .into_iter()
            .map(|f| {
                (
                    f,
                    RwLock::new(FamilyData {
                        family: f,
                        map: BTreeMap::new(),
                        file: None,
                    }),
                )
            })
            .collect();
        Store {
            dir: None,
            durability: Durability::Flush,
            families,
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Store> {
        Store::open_with(dir, Durability::Sync)
    }

    pub fn open_with(dir: impl AsRef<Path>, durability: Durability) -> Result<Store> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut families = HashMap::new();
        for family in Family::ALL {
            let path = dir.join(format!("{}.log", family.name()));
            let data = load_family(family, &path)?;
            families.insert(family, RwLock::new(data));
        }
        Ok(Store {
            dir: Some(dir),
            durability,
            families,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn family(&self, family: Family) -> &RwLock<FamilyData> {
        &self.families[&family]
    }

    pub fn get<T: DeserializeOwned>(&self, family: Family, key: &str) -> Result<Option<T>> {
        let data = self.family(family).read();
        data.read(key)?.map(|json| decode(family, key, json)).transpose()
    }

    /// All records whose key starts with `prefix`, in key order.
    pub fn scan<T: DeserializeOwned>(&self, family: Family, prefix: &str) -> Result<Vec<(String, T)>> {
        let data = self.family(family).read();
        scan_map(&data, prefix)
    }

    pub fn put<T: Serialize>(&self, family: Family, key: &str, value: &T) -> Result<()> {
        self.transact(family, |txn| txn.put(key, value))
    }

    pub fn delete(&self, family: Family, key: &str) -> Result<()> {
        self.transact(family, |txn| {
            txn.delete(key);
            Ok(())
        })
    }

    /// Runs `f` under the family's write lock and commits its writes as a
    /// single atomic log record. Nothing is written if `f` fails.
    pub fn transact<R>(&self, family: Family, f: impl FnOnce(&mut Txn<'_>) -> Result<R>) -> Result<R> {
        let mut data = self.family(family).write();
        let mut txn = Txn {
            data: &data,
            pending: Vec::new(),
        };
        let out = f(&mut txn)?;
        let pending = txn.pending;
        if pending.is_empty() {
            return Ok(out);
        }
        if let Some(file) = data.file.as_mut() {
            let ops: Vec<Op> = pending
                .iter()
                .map(|(k, v)| {
                    let v = v
                        .as_ref()
                        .map(|json| serde_json::from_str(json))
                        .transpose()
                        .map_err(|e| Error::Storage(e.to_string()))?;
                    Ok(Op { k: k.clone(), v })
                })
                .collect::<Result<_>>()?;
            let payload = serde_json::to_string(&ops).map_err(|e| Error::Storage(e.to_string()))?;
            let crc = crc32fast::hash(payload.as_bytes());
            let line = format!("{crc:08x} {payload}\n");
            file.write_all(line.as_bytes())
                .map_err(|e| Error::Storage(format!("append to {}: {e}", family.name())))?;
            match self.durability {
                Durability::Sync => file.sync_data(),
                Durability::Flush => file.flush(),
            }
            .map_err(|e| Error::Storage(format!("sync {}: {e}", family.name())))?;
        }
        for (k, v) in pending {
            match v {
                Some(json) => {
                    data.map.insert(k, Slot::Ok(json));
                }
                None => {
                    data.map.remove(&k);
                }
            }
        }
        Ok(out)
    }

    /// Line-delimited `{"key", "value"}` records for one family.
    pub fn export(&self, family: Family) -> Result<Vec<String>> {
        let data = self.family(family).read();
        let mut lines = Vec::new();
        for key in data.map.keys() {
            if key == SEQ_KEY {
                continue;
            }
            let json = data.read(key)?.unwrap_or("null");
            let value: serde_json::Value = decode(family, key, json)?;
            lines.push(serde_json::json!({ "key": key, "value": value }).to_string());
        }
        Ok(lines)
    }

    /// Inverse of [`Store::export`]; existing keys are overwritten.
    pub fn import(&self, family: Family, lines: &[String]) -> Result<usize> {
        #[derive(Deserialize)]
        struct Line {
            key: String,
            value: serde_json::Value,
        }
        let parsed: Vec<Line> = lines
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::validation(format!("import line: {e}"))))
            .collect::<Result<_>>()?;
        let n = parsed.len();
        self.transact(family, |txn| {
            for line in &parsed {
                txn.put(&line.key, &line.value)?;
            }
            Ok(())
        })?;
        Ok(n)
    }

    /// Rewrites each family log to contain only live records. Refuses to run
    /// while any family holds a corrupt record.
    pub fn compact(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for family in Family::ALL {
            let mut data = self.family(family).write();
            let ops: Vec<Op> = data
                .map
                .iter()
                .map(|(k, slot)| match slot {
                    Slot::Ok(json) => Ok(Op {
                        k: k.clone(),
                        v: serde_json::from_str(json).ok(),
                    }),
                    Slot::Corrupt => Err(Error::Corrupt {
                        family: family.name().into(),
                        key: k.clone(),
                    }),
                })
                .collect::<Result<_>>()?;
            let path = dir.join(format!("{}.log", family.name()));
            let tmp = dir.join(format!("{}.log.tmp", family.name()));
            {
                let mut out = File::create(&tmp)?;
                for op in &ops {
                    let payload =
                        serde_json::to_string(std::slice::from_ref(op)).map_err(|e| Error::Storage(e.to_string()))?;
                    writeln!(out, "{:08x} {payload}", crc32fast::hash(payload.as_bytes()))?;
                }
                out.sync_all()?;
            }
            fs::rename(&tmp, &path)?;
            data.file = Some(OpenOptions::new().append(true).open(&path)?);
        }
        Ok(())
    }
}

/// Read/write view inside [`Store::transact`]. Reads see the transaction's
/// own pending writes.
pub struct Txn<'a> {
    data: &'a FamilyData,
    pending: Vec<(String, Option<String>)>,
}

impl Txn<'_> {
    fn pending_value(&self, key: &str) -> Option<&Option<String>> {
        self.pending.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let family = self.data.family;
        match self.pending_value(key) {
            Some(Some(json)) => decode(family, key, json).map(Some),
            Some(None) => Ok(None),
            None => self.data.read(key)?.map(|json| decode(family, key, json)).transpose(),
        }
    }

    pub fn scan<T: DeserializeOwned>(&self, prefix: &str) -> Result<Vec<(String, T)>> {
        let mut merged: BTreeMap<String, String> = BTreeMap::new();
        for (k, slot) in range_prefix(&self.data.map, prefix).filter(|(k, _)| k.as_str() != SEQ_KEY) {
            match slot {
                Slot::Ok(json) => {
                    merged.insert(k.clone(), json.clone());
                }
                Slot::Corrupt => {
                    return Err(Error::Corrupt {
                        family: self.data.family.name().into(),
                        key: k.clone(),
                    })
                }
            }
        }
        for (k, v) in &self.pending {
            if k.starts_with(prefix) && k != SEQ_KEY {
                match v {
                    Some(json) => merged.insert(k.clone(), json.clone()),
                    None => merged.remove(k),
                };
            }
        }
        merged
            .into_iter()
            .map(|(k, json)| decode(self.data.family, &k, &json).map(|v| (k, v)))
            .collect()
    }

    pub fn put<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string(value).map_err(|e| Error::Storage(e.to_string()))?;
        self.pending.push((key.to_owned(), Some(json)));
        Ok(())
    }

    pub fn delete(&mut self, key: &str) {
        self.pending.push((key.to_owned(), None));
    }

    /// Next value of the family's persistent sequence counter, starting at 1.
    pub fn next_seq(&mut self) -> Result<u64> {
        let next = self.get::<u64>(SEQ_KEY)?.unwrap_or(0) + 1;
        self.put(SEQ_KEY, &next)?;
        Ok(next)
    }
}

fn decode<T: DeserializeOwned>(family: Family, key: &str, json: &str) -> Result<T> {
    serde_json::from_str(json).map_err(|e| Error::Storage(format!("decode {}/{key}: {e}", family.name())))
}

fn range_prefix<'m>(map: &'m BTreeMap<String, Slot>, prefix: &str) -> impl Iterator<Item = (&'m String, &'m Slot)> {
    let owned = prefix.to_owned();
    map.range(prefix.to_owned()..)
        .take_while(move |(k, _)| k.starts_with(&owned))
}

fn scan_map<T: DeserializeOwned>(data: &FamilyData, prefix: &str) -> Result<Vec<(String, T)>> {
    range_prefix(&data.map, prefix)
        .filter(|(k, _)| k.as_str() != SEQ_KEY)
        .map(|(k, slot)| match slot {
            Slot::Ok(json) => decode(data.family, k, json).map(|v| (k.clone(), v)),
            Slot::Corrupt => Err(Error::Corrupt {
                family: data.family.name().into(),
                key: k.clone(),
            }),
        })
        .collect()
}

fn load_family(family: Family, path: &Path) -> Result<FamilyData> {
    let mut map = BTreeMap::new();
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let mut reader = BufReader::new(&mut file);
    let mut offset: u64 = 0;
    let mut committed_end: u64 = 0;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        offset += n as u64;
        if buf.last() != Some(&b'\n') {
            tracing::warn!(family = family.name(), "discarding torn trailing write");
            break;
        }
        line_no += 1;
        committed_end = offset;
        let line = String::from_utf8_lossy(&buf[..buf.len() - 1]).into_owned();
        let Some((crc_hex, payload)) = line.split_once(' ') else {
            return Err(corrupt_line(family, line_no));
        };
        let ops: Vec<Op> = serde_json::from_str(payload).map_err(|_| corrupt_line(family, line_no))?;
        let intact = u32::from_str_radix(crc_hex, 16).ok() == Some(crc32fast::hash(payload.as_bytes()));
        for op in ops {
            match (intact, op.v) {
                (false, _) => {
                    map.insert(op.k, Slot::Corrupt);
                }
                (true, Some(v)) => {
                    map.insert(op.k, Slot::Ok(v.to_string()));
                }
                (true, None) => {
                    map.remove(&op.k);
                }
            }
        }
    }
    drop(reader);
    if committed_end < file.metadata()?.len() {
        file.set_len(committed_end)?;
        file.seek(SeekFrom::End(0))?;
    }
    Ok(FamilyData {
        family,
        map,
        file: Some(file),
    })
}

fn corrupt_line(family: Family, line_no: usize) -> Error {
    Error::Corrupt {
        family: family.name().into(),
        key: format!("<line {line_no}>"),
    }
}
