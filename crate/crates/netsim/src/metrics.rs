//! Run results and their CSV forms.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use hdrhistogram::Histogram;

pub const METRICS_SCHEMA: &str = "synproxy-metrics-v1";
pub const HISTOGRAM_SCHEMA: &str = "synproxy-latency-hist-v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:.6}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, Value>,
    pub histograms: BTreeMap<String, Histogram<u64>>,
}

impl MetricsReport {
    pub fn new() -> Self {
        MetricsReport {
            metrics: BTreeMap::new(),
            histograms: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: impl Into<String>, v: impl Into<Value>) {
        self.metrics.insert(name.into(), v.into());
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.metrics.get(name)
    }

    /// Numeric metric; panics if absent or textual.
    pub fn num(&self, name: &str) -> f64 {
        self.get(name)
            .and_then(Value::as_f64)
            .unwrap_or_else(|| panic!("no numeric metric {name}"))
    }

    pub fn write_metrics_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["schema", "metric", "value"])?;
        for (k, v) in &self.metrics {
            out.write_record([METRICS_SCHEMA, k, &v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Log-bucketed counts, doubling from 1 µs.
    pub fn write_histogram_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["schema", "histogram", "bucket_upper_us", "count"])?;
        for (name, h) in &self.histograms {
            if h.is_empty() {
                continue;
            }
            for v in h.iter_log(1, 2.0) {
                out.write_record([
                    HISTOGRAM_SCHEMA,
                    name,
                    &v.value_iterated_to().to_string(),
                    &v.count_since_last_iteration().to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// A few headline numbers for a terminal.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for key in [
            "run.strategy",
            "run.seed",
            "run.duration_s",
            "requests.total",
            "requests.success_probability",
            "connections.established",
            "latency.setup_us.p50",
            "latency.setup_us.p99",
            "latency.request_us.p50",
            "latency.request_us.p99",
            "attack.syn_sent",
            "proxy.capacity_drops",
            "server.tcb_allocations",
            "server.attack_segments",
        ] {
            if let Some(v) = self.get(key) {
                s.push_str(&format!("{key:32} {v}\n"));
            }
        }
        s
    }
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_shape() {
        let mut r = MetricsReport::new();
        r.set("b.count", 3u64);
        r.set("a.ratio", 0.5);
        r.set("c.name", "syn-cookie");
        let mut buf = Vec::new();
        r.write_metrics_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "schema,metric,value\n\
             synproxy-metrics-v1,a.ratio,0.500000\n\
             synproxy-metrics-v1,b.count,3\n\
             synproxy-metrics-v1,c.name,syn-cookie\n"
        );
    }

    #[test]
    fn histogram_csv_counts_add_up() {
        let mut r = MetricsReport::new();
        let mut h = Histogram::<u64>::new_with_bounds(1, 3_600_000_000, 3).unwrap();
        for v in [5u64, 100, 100, 4000] {
            h.record(v).unwrap();
        }
        r.histograms.insert("setup_us".into(), h);
        let mut buf = Vec::new();
        r.write_histogram_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: u64 = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 4);
    }
}
