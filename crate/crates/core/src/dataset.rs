//! In-memory datasets and the line-delimited JSON file format.
//!
//! A dataset file is a header line followed by one record per line:
//!
//! ```text
//! {"schema_version":1,"bmax":4,"feature_dim":2,"metric_kind":"success-rate"}
//! {"id":"q0","features":[0.1,-2.0],"rewards":[0.0,1.0,0.0,0.0],"true_lambda":0.3}
//! ```
//!
//! `feature_dim` is 0 when records carry no features. Two-decoder routing
//! datasets add `weak_rewards` (the weak decoder's pool) next to `rewards`
//! (the strong decoder's pool).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{OutcomePool, SuccessProb};
use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    SuccessRate,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub bmax: usize,
    pub feature_dim: usize,
    pub metric_kind: MetricKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub features: Option<Vec<f64>>,
    pub outcomes: OutcomePool<f64>,
    pub true_lambda: Option<SuccessProb<f64>>,
    pub weak_outcomes: Option<OutcomePool<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weak_rewards: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<QueryRecord>,
}

impl Dataset {
    /// Validates every record against the header.
    pub fn new(header: DatasetHeader, records: Vec<QueryRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, r) in records.iter().enumerate() {
            check_record(&header, r).map_err(|message| Error::Parse { line: i + 2, message })?;
        }
        Ok(Self { header, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bmax(&self) -> usize {
        self.header.bmax
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn pools(&self) -> impl Iterator<Item = &OutcomePool<f64>> {
        self.records.iter().map(|r| &r.outcomes)
    }

    /// Feature rows; errors if any record lacks features.
    pub fn features(&self) -> Result<Vec<Vec<f64>>> {
        self.records
            .iter()
            .map(|r| {
                r.features
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument(format!("record {} has no features", r.id)))
            })
            .collect()
    }

    /// Known success probabilities; errors if any record lacks one.
    pub fn true_lambdas(&self) -> Result<Vec<SuccessProb<f64>>> {
        self.records
            .iter()
            .map(|r| {
                r.true_lambda
                    .ok_or_else(|| Error::InvalidArgument(format!("record {} has no true_lambda", r.id)))
            })
            .collect()
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.header.clone(), records)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                features: r.features.clone(),
                rewards: r.outcomes.rewards().to_vec(),
                true_lambda: r.true_lambda.map(|l| l.value()),
                weak_rewards: r.weak_outcomes.as_ref().map(|p| p.rewards().to_vec()),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut header: Option<DatasetHeader> = None;
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                line: lineno,
                message: e.to_string(),
            };
            match &header {
                None => {
                    let h: DatasetHeader = serde_json::from_str(&line).map_err(parse_err)?;
                    if h.schema_version != DATASET_SCHEMA_VERSION {
                        return Err(Error::VersionMismatch {
                            found: h.schema_version,
                            expected: DATASET_SCHEMA_VERSION,
                        });
                    }
                    if h.bmax == 0 {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "bmax must be positive".into(),
                        });
                    }
                    header = Some(h);
                }
                Some(h) => {
                    let raw: RecordLine = serde_json::from_str(&line).map_err(parse_err)?;
                    let record = to_record(raw).map_err(|message| Error::Parse { line: lineno, message })?;
                    check_record(h, &record).map_err(|message| Error::Parse { line: lineno, message })?;
                    records.push(record);
                }
            }
        }
        let header = header.ok_or(Error::EmptyDataset)?;
        Self::new(header, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(File::open(path)?)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::load(path)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.save(path)
}

fn to_record(raw: RecordLine) -> std::result::Result<QueryRecord, String> {
    let outcomes = OutcomePool::new(raw.rewards).map_err(|e| e.to_string())?;
    let weak_outcomes = raw
        .weak_rewards
        .map(OutcomePool::new)
        .transpose()
        .map_err(|e| e.to_string())?;
    let true_lambda = raw
        .true_lambda
        .map(SuccessProb::new)
        .transpose()
        .map_err(|e| e.to_string())?;
    Ok(QueryRecord {
        id: raw.id,
        features: raw.features,
        outcomes,
        true_lambda,
        weak_outcomes,
    })
}

fn check_record(header: &DatasetHeader, r: &QueryRecord) -> std::result::Result<(), String> {
    if r.outcomes.len() != header.bmax {
        return Err(format!(
            "record {} has {} rewards but bmax is {}",
            r.id,
            r.outcomes.len(),
            header.bmax
        ));
    }
    if let Some(w) = &r.weak_outcomes {
        if w.len() != header.bmax {
            return Err(format!(
                "record {} has {} weak rewards but bmax is {}",
                r.id,
                w.len(),
                header.bmax
            ));
        }
    }
    match (&r.features, header.feature_dim) {
        (None, 0) => {}
        (Some(f), d) if f.len() == d && d > 0 => {}
        (Some(f), d) => {
            return Err(format!("record {} has {} features but feature_dim is {d}", r.id, f.len()));
        }
        (None, d) => return Err(format!("record {} has no features but feature_dim is {d}", r.id)),
    }
    if r.outcomes.rewards().iter().any(|x| !x.is_finite()) {
        return Err(format!("record {} has a non-finite reward", r.id));
    }
    if header.metric_kind == MetricKind::SuccessRate && !r.outcomes.is_binary() {
        return Err(format!("record {} has non-binary rewards in a success-rate dataset", r.id));
    }
    Ok(())
}
