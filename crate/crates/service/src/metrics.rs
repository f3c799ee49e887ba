//! Externally computed automatic metrics (FID, KID, precision, ...) keyed by model.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model_id: String,
    pub metric: String,
    pub value: f64,
}

/// Unique `(model, metric)` values. Metric names compare case-insensitively
/// and are stored as first seen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    values: BTreeMap<(String, String), f64>,
    names: BTreeMap<String, String>,
}

impl MetricTable {
    /// Parses `model_id,metric,value` CSV with a header row.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut table = Self::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            table.insert(row?)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, row: MetricRow) -> Result<()> {
        if !row.value.is_finite() {
            return Err(ServiceError::BadRequest(format!("{}/{} is not finite", row.model_id, row.metric)));
        }
        let key = row.metric.to_lowercase();
        self.names.entry(key.clone()).or_insert_with(|| row.metric.clone());
        if self.values.insert((row.model_id.clone(), key), row.value).is_some() {
            return Err(ServiceError::Conflict(format!("duplicate value for {} / {}", row.model_id, row.metric)));
        }
        Ok(())
    }

    /// Merges `other` in, replacing values already present.
    pub fn merge(&mut self, other: MetricTable) {
        for (k, v) in other.names {
            self.names.entry(k).or_insert(v);
        }
        self.values.extend(other.values);
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.names.values().map(String::as_str)
    }

    pub fn get(&self, model_id: &str, metric: &str) -> Option<f64> {
        self.values.get(&(model_id.to_string(), metric.to_lowercase())).copied()
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        self.values
            .iter()
            .map(|((model_id, key), &value)| MetricRow {
                model_id: model_id.clone(),
                metric: self.names[key].clone(),
                value,
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| ServiceError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
