use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SteeringError};

pub const COUNTS_FORMAT_VERSION: u32 = 1;

/// Sign of the eigenstate Bob's single detector is set to for a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectorSign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl ProjectorSign {
    pub const BOTH: [ProjectorSign; 2] = [ProjectorSign::Plus, ProjectorSign::Minus];

    pub fn value(self) -> i8 {
        match self {
            ProjectorSign::Plus => 1,
            ProjectorSign::Minus => -1,
        }
    }

    fn index(self) -> usize {
        match self {
            ProjectorSign::Plus => 0,
            ProjectorSign::Minus => 1,
        }
    }
}

/// Alice's announcement for a round in which Bob clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Announcement {
    Plus,
    Minus,
    Null,
}

impl Announcement {
    pub fn from_sign(a: i8) -> Self {
        match a.signum() {
            1 => Announcement::Plus,
            -1 => Announcement::Minus,
            _ => Announcement::Null,
        }
    }

    fn index(self) -> usize {
        match self {
            Announcement::Plus => 0,
            Announcement::Minus => 1,
            Announcement::Null => 2,
        }
    }
}

/// Event counts per setting `k`, projector sign `s` and announcement.
/// Only rounds in which Bob's detector clicked are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub set_name: String,
    pub rounds: u64,
    pub seed: u64,
    /// Echo of the configuration that produced the table.
    pub config: Value,
    cells: Vec<[[u64; 3]; 2]>,
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    k: usize,
    s: ProjectorSign,
    plus: u64,
    minus: u64,
    null: u64,
}

#[derive(Serialize, Deserialize)]
struct CountsDocument {
    format_version: u32,
    set: String,
    n: usize,
    rounds: u64,
    seed: u64,
    config: Value,
    records: Vec<CellRecord>,
}

impl CountsTable {
    pub fn new(set_name: impl Into<String>, n: usize) -> Self {
        CountsTable {
            set_name: set_name.into(),
            rounds: 0,
            seed: 0,
            config: Value::Null,
            cells: vec![[[0; 3]; 2]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn record(&mut self, k: usize, s: ProjectorSign, a: Announcement) {
        self.cells[k][s.index()][a.index()] += 1;
    }

    pub fn add(&mut self, k: usize, s: ProjectorSign, a: Announcement, count: u64) {
        self.cells[k][s.index()][a.index()] += count;
    }

    pub fn count(&self, k: usize, s: ProjectorSign, a: Announcement) -> u64 {
        self.cells[k][s.index()][a.index()]
    }

    /// Bob's clicks for setting `k`, over both projector signs.
    pub fn bob_detections(&self, k: usize) -> u64 {
        self.cells[k].iter().flatten().sum()
    }

    /// Clicks for setting `k` with a non-null announcement.
    pub fn conclusive(&self, k: usize) -> u64 {
        self.cells[k].iter().map(|c| c[0] + c[1]).sum()
    }

    pub fn total_detections(&self) -> u64 {
        (0..self.n()).map(|k| self.bob_detections(k)).sum()
    }

    pub fn total_conclusive(&self) -> u64 {
        (0..self.n()).map(|k| self.conclusive(k)).sum()
    }

    /// Cell-wise sum; tables must describe the same set.
    pub fn merge(&mut self, other: &CountsTable) {
        assert_eq!(self.n(), other.n(), "merging tables of different sizes");
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            for s in 0..2 {
                for x in 0..3 {
                    a[s][x] += b[s][x];
                }
            }
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut records = Vec::with_capacity(2 * self.n());
        for k in 0..self.n() {
            for s in ProjectorSign::BOTH {
                records.push(CellRecord {
                    k,
                    s,
                    plus: self.count(k, s, Announcement::Plus),
                    minus: self.count(k, s, Announcement::Minus),
                    null: self.count(k, s, Announcement::Null),
                });
            }
        }
        let doc = CountsDocument {
            format_version: COUNTS_FORMAT_VERSION,
            set: self.set_name.clone(),
            n: self.n(),
            rounds: self.rounds,
            seed: self.seed,
            config: self.config.clone(),
            records,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Parses and validates a counts document: every `(k, s)` cell appears
    /// exactly once for `k < n`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: CountsDocument = serde_json::from_str(text)
            .map_err(|e| SteeringError::Schema(format!("counts document: {e}")))?;
        if doc.format_version != COUNTS_FORMAT_VERSION {
            return Err(SteeringError::Schema(format!(
                "unsupported counts format_version {}",
                doc.format_version
            )));
        }
        if doc.n == 0 {
            return Err(SteeringError::Schema("counts document has n = 0".into()));
        }
        let mut table = CountsTable::new(doc.set, doc.n);
        table.rounds = doc.rounds;
        table.seed = doc.seed;
        table.config = doc.config;
        let mut seen = vec![[false; 2]; doc.n];
        for (i, r) in doc.records.iter().enumerate() {
            if r.k >= doc.n {
                return Err(SteeringError::Schema(format!(
                    "record {i}: setting k={} outside 0..{}",
                    r.k, doc.n
                )));
            }
            let slot = &mut seen[r.k][r.s.index()];
            if *slot {
                return Err(SteeringError::Schema(format!(
                    "record {i}: duplicate cell k={} s={}",
                    r.k,
                    r.s.value()
                )));
            }
            *slot = true;
            table.add(r.k, r.s, Announcement::Plus, r.plus);
            table.add(r.k, r.s, Announcement::Minus, r.minus);
            table.add(r.k, r.s, Announcement::Null, r.null);
        }
        for (k, s) in seen.iter().enumerate() {
            if !s[0] && !s[1] {
                return Err(SteeringError::Schema(format!(
                    "setting k={k} has no records"
                )));
            }
            if !(s[0] && s[1]) {
                let missing = if s[0] { "-" } else { "+" };
                return Err(SteeringError::Schema(format!(
                    "setting k={k} has no record for projector {missing}"
                )));
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_from(cells: &[u64], n: usize) -> CountsTable {
        let mut t = CountsTable::new("test", n);
        let mut it = cells.iter().copied();
        for k in 0..n {
            for s in ProjectorSign::BOTH {
                for a in [Announcement::Plus, Announcement::Minus, Announcement::Null] {
                    t.add(k, s, a, it.next().unwrap_or(0));
                }
            }
        }
        t
    }

    #[test]
    fn totals() {
        let t = table_from(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12], 2);
        assert_eq!(t.bob_detections(0), 21);
        assert_eq!(t.conclusive(0), 1 + 2 + 4 + 5);
        assert_eq!(t.total_detections(), 78);
    }

    #[test]
    fn missing_setting_is_named() {
        let t = table_from(&[1; 12], 2);
        let text = t.to_json_string().unwrap();
        let mut v: Value = serde_json::from_str(&text).unwrap();
        let recs = v["records"].as_array_mut().unwrap();
        recs.retain(|r| r["k"] != 1);
        let err = CountsTable::from_json_str(&v.to_string()).unwrap_err();
        assert_eq!(err.to_string(), "schema error: setting k=1 has no records");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn duplicate_and_out_of_range_records_rejected() {
        let t = table_from(&[1; 6], 1);
        let mut v: Value = serde_json::from_str(&t.to_json_string().unwrap()).unwrap();
        let first = v["records"][0].clone();
        v["records"].as_array_mut().unwrap().push(first);
        assert!(CountsTable::from_json_str(&v.to_string()).is_err());

        let mut v: Value = serde_json::from_str(&t.to_json_string().unwrap()).unwrap();
        v["records"][0]["k"] = 5.into();
        let err = CountsTable::from_json_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("record 0"));
    }

    #[test]
    fn wrong_version_rejected() {
        let t = table_from(&[1; 6], 1);
        let mut v: Value = serde_json::from_str(&t.to_json_string().unwrap()).unwrap();
        v["format_version"] = 9.into();
        assert!(CountsTable::from_json_str(&v.to_string()).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(cells in proptest::collection::vec(0u64..1_000_000_000, 18),
                           rounds in any::<u64>(), seed in any::<u64>(), x in -1e3f64..1e3) {
            let mut t = table_from(&cells, 3);
            t.rounds = rounds;
            t.seed = seed;
            t.config = serde_json::json!({ "v": x, "name": "z" });
            let back = CountsTable::from_json_str(&t.to_json_string().unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn merge_is_commutative(a in proptest::collection::vec(0u64..1000, 12),
                                b in proptest::collection::vec(0u64..1000, 12)) {
            let (ta, tb) = (table_from(&a, 2), table_from(&b, 2));
            let mut x = ta.clone();
            x.merge(&tb);
            let mut y = tb.clone();
            y.merge(&ta);
            prop_assert_eq!(x, y);
        }
    }
}
