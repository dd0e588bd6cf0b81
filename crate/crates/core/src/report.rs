//! CSV files exchanged between pipeline stages and with plotting tools.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CategoryModel, FeatureRef};
use crate::sampler::{Partition, TraceRecord};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub image_id: String,
    pub label: String,
}

/// `image_id,label` with one row per image, in representation order.
pub fn write_solution(path: &Path, ids: &[String], partition: &Partition) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, label) in ids.iter().zip(partition.labels()) {
        w.serialize(LabelRow {
            image_id: id.clone(),
            label: label.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `image_id,label` file; labels may be any strings.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<LabelRow>, _>>()?;
    Ok(rows)
}

/// Labels of `ids` looked up in `rows`, renumbered densely by sorted label string.
pub fn align_labels(ids: &[String], rows: &[LabelRow], what: &str) -> Result<Vec<usize>> {
    let names: BTreeSet<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let names: Vec<&str> = names.into_iter().collect();
    let by_id: std::collections::HashMap<&str, &str> =
        rows.iter().map(|r| (r.image_id.as_str(), r.label.as_str())).collect();
    ids.iter()
        .map(|id| {
            let label = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Config(format!("image {id} has no {what} label")))?;
            Ok(names.binary_search(label).expect("label was collected"))
        })
        .collect()
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in trace {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SelectedWordRow<'a> {
    category: usize,
    rank: usize,
    block: usize,
    word_id: usize,
    word_kind: &'a str,
    lambda: f64,
    gain: f64,
}

/// One row per selected feature, in each model's stored order.
/// `kind_of` names the word type of a word id.
pub fn write_selected_words<S: Scalar>(
    path: &Path,
    models: &[CategoryModel<S>],
    words_per_block: usize,
    kind_of: &dyn Fn(usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (category, model) in models.iter().enumerate() {
        for (rank, f) in model.selected.iter().enumerate() {
            let fr = FeatureRef::from_component(f.feature, words_per_block);
            let kind = kind_of(fr.word);
            w.serialize(SelectedWordRow {
                category,
                rank,
                block: fr.block,
                word_id: fr.word,
                word_kind: &kind,
                lambda: f.lambda.as_f64(),
                gain: f.gain.as_f64(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
    Ok(rows)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solution_round_trip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solution.csv");
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        write_solution(&path, &ids, &Partition::from_labels(&[4, 1, 4])).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "image_id,label\na,1\nb,0\nc,1\n");
        let rows = read_labels(&path).unwrap();
        let reordered: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(align_labels(&reordered, &rows, "predicted").unwrap(), vec![1, 1, 0]);
        let missing = vec!["z".to_string()];
        assert!(align_labels(&missing, &rows, "predicted").is_err());
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![
            TraceRecord {
                iteration: 0,
                energy: 10.5,
                k: 3,
                accepted: false,
                best_energy: 10.5,
            },
            TraceRecord {
                iteration: 1,
                energy: 9.25,
                k: 2,
                accepted: true,
                best_energy: 9.25,
            },
        ];
        write_trace(&path, &trace).unwrap();
        let head = std::fs::read_to_string(&path).unwrap();
        assert!(head.starts_with("iteration,energy,K,accepted,best_energy\n"));
        assert_eq!(read_trace(&path).unwrap(), trace);
    }

    #[test]
    fn mean_std_fixture() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
