//! Metrics records, per-node JSON-lines logs and the aggregated CSV.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Columns of the aggregated CSV after `time,node`, in order.
pub const CSV_COLUMNS: &[&str] = &[
    "episode_return",
    "validation_return",
    "episode_steps",
    "success",
    "policy_version",
    "critic_loss",
    "actor_loss",
    "critic_grad_norm",
    "updates",
    "samples_per_sec",
    "updates_per_sec",
    "buffer_size",
];

pub fn now_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Seconds since the Unix epoch.
    pub time: f64,
    pub node: String,
    pub values: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(node: impl Into<String>) -> Self {
        MetricsRecord {
            time: now_secs(),
            node: node.into(),
            values: BTreeMap::new(),
        }
    }

    /// Adds a value; non-finite values are dropped since JSON cannot carry them.
    pub fn with(mut self, key: &str, value: f64) -> Self {
        if value.is_finite() {
            self.values.insert(key.to_string(), value);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

fn file_stem(node: &str) -> String {
    node.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Appends records to `<dir>/<node>.jsonl`, keeping each node's
/// timestamps non-decreasing.
pub struct MetricsSink {
    dir: PathBuf,
    files: HashMap<String, (BufWriter<File>, f64)>,
}

impl MetricsSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(MetricsSink {
            dir: dir.to_path_buf(),
            files: HashMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, mut record: MetricsRecord) -> Result<()> {
        let stem = file_stem(&record.node);
        if !self.files.contains_key(&stem) {
            let f = OpenOptions::new().create(true).append(true).open(self.dir.join(format!("{stem}.jsonl")))?;
            self.files.insert(stem.clone(), (BufWriter::new(f), f64::NEG_INFINITY));
        }
        let (w, last) = self.files.get_mut(&stem).expect("inserted");
        record.time = record.time.max(*last);
        *last = record.time;
        serde_json::to_writer(&mut *w, &record)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            // a node killed mid-write leaves a partial last line
            Err(e) => log::warn!("skipping unreadable metrics line in {}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Every record under `path` (a `.jsonl` file or a directory of them),
/// sorted by time.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for f in files {
            records.extend(read_jsonl(&f)?);
        }
    } else {
        records = read_jsonl(path)?;
    }
    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: &mut W) -> Result<()> {
    write!(out, "time,node")?;
    for c in CSV_COLUMNS {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for r in records {
        write!(out, "{},{}", r.time, r.node.replace(',', "_"))?;
        for c in CSV_COLUMNS {
            match r.get(c) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Aggregates every node log in `dir` into one CSV file.
pub fn aggregate_csv(dir: &Path, out: &Path) -> Result<usize> {
    let records = read_metrics(dir)?;
    let mut w = BufWriter::new(File::create(out)?);
    write_csv(&records, &mut w)?;
    w.flush()?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sink_keeps_time_monotone_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = MetricsSink::new(dir.path()).unwrap();
        let mut a = MetricsRecord::new("trainer-0").with("critic_loss", 1.5).with("actor_loss", f64::NAN);
        a.time = 10.0;
        let mut b = MetricsRecord::new("trainer-0").with("critic_loss", 1.0);
        b.time = 5.0;
        let mut c = MetricsRecord::new("sampler/1").with("episode_return", 3.0);
        c.time = 7.0;
        sink.write(a).unwrap();
        sink.write(b).unwrap();
        sink.write(c).unwrap();
        let t0 = read_jsonl(&dir.path().join("trainer-0.jsonl")).unwrap();
        assert_eq!(t0.len(), 2);
        assert_eq!(t0[1].time, 10.0);
        assert!(t0[0].get("actor_loss").is_none());
        assert!(dir.path().join("sampler_1.jsonl").exists());

        let all = read_metrics(dir.path()).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].time <= w[1].time));

        let csv = dir.path().join("metrics.csv");
        assert_eq!(aggregate_csv(dir.path(), &csv).unwrap(), 3);
        let text = std::fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("time,node,episode_return,validation_return"));
        let cols = header.split(',').count();
        assert!(lines.all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn partial_line_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(&p, "{\"time\":1.0,\"node\":\"x\",\"values\":{}}\n{\"time\":2").unwrap();
        assert_eq!(read_jsonl(&p).unwrap().len(), 1);
    }
}
