use serde::Deserialize;

use crate::error::{Error, Result};

/// Alpha-beta machine model. `beta()` is seconds per word.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareModel {
    /// Seconds per message-latency unit.
    pub alpha: f64,
    /// Seconds per byte.
    pub inv_bandwidth: f64,
    pub word_bytes: u32,
    pub compute: Option<ComputeModel>,
}

impl HardwareModel {
    pub const DEFAULT_ALPHA: f64 = 2e-6;
    pub const DEFAULT_BANDWIDTH: f64 = 6e9;

    pub fn new(alpha: f64, bandwidth_bytes_per_s: f64, word_bytes: u32) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha_s", "must be a finite value >= 0"));
        }
        if !(bandwidth_bytes_per_s > 0.0 && bandwidth_bytes_per_s.is_finite()) {
            return Err(Error::invalid("bandwidth_bytes_per_s", "must be a finite value > 0"));
        }
        check_word_bytes(word_bytes)?;
        Ok(Self { alpha, inv_bandwidth: 1.0 / bandwidth_bytes_per_s, word_bytes, compute: None })
    }

    /// Cori/KNL figures: 2 us latency, 6 GB/s, fp32 words.
    pub fn knl_cluster() -> Self {
        Self::new(Self::DEFAULT_ALPHA, Self::DEFAULT_BANDWIDTH, 4).expect("defaults are valid")
    }

    /// Unit-style model with `beta` given directly in seconds per word.
    pub fn from_alpha_beta(alpha: f64, beta: f64) -> Self {
        Self { alpha, inv_bandwidth: beta / 4.0, word_bytes: 4, compute: None }
    }

    pub fn with_compute(mut self, compute: ComputeModel) -> Self {
        self.compute = Some(compute);
        self
    }

    pub fn beta(&self) -> f64 {
        self.inv_bandwidth * self.word_bytes as f64
    }
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self::knl_cluster()
    }
}

fn check_word_bytes(word_bytes: u32) -> Result<()> {
    if matches!(word_bytes, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::invalid("word_bytes", format!("{word_bytes} is not one of 2, 4, 8")))
    }
}

/// Per-iteration compute time as a function of the per-process batch.
#[derive(Debug, Clone, PartialEq)]
pub enum ComputeModel {
    /// Measured `(per_process_batch, seconds_per_iteration)` points.
    Table(ComputeTable),
    /// `6 * |W_i| * b` flops per layer per iteration at the given rate.
    Throughput { flops_per_second: f64, efficiency: f64 },
}

impl ComputeModel {
    pub fn throughput(flops_per_second: f64, efficiency: f64) -> Result<Self> {
        if !(flops_per_second > 0.0 && flops_per_second.is_finite()) {
            return Err(Error::invalid("compute.flops", "must be > 0"));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::invalid("compute.efficiency", "must lie in (0, 1]"));
        }
        Ok(ComputeModel::Throughput { flops_per_second, efficiency })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputeTable {
    points: Vec<(f64, f64)>,
}

impl ComputeTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("compute.table", "needs at least one point"));
        }
        for (i, &(b, t)) in points.iter().enumerate() {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("compute.table[{i}]"), "batch must be > 0"));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("compute.table[{i}]"), "time must be > 0"));
            }
            if i > 0 && b <= points[i - 1].0 {
                return Err(Error::invalid(
                    format!("compute.table[{i}]"),
                    "batch keys must be strictly increasing",
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Piecewise-linear interpolation, clamped to the end points outside the
    /// table.
    pub fn seconds_at(&self, batch: f64) -> f64 {
        let pts = &self.points;
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if batch <= first.0 {
            return first.1;
        }
        if batch >= last.0 {
            return last.1;
        }
        let hi = pts.partition_point(|&(b, _)| b < batch);
        let (b0, t0) = pts[hi - 1];
        let (b1, t1) = pts[hi];
        t0 + (t1 - t0) * (batch - b0) / (b1 - b0)
    }
}

// ---- document form ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HardwareDoc {
    alpha_s: f64,
    bandwidth_bytes_per_s: f64,
    #[serde(default = "default_word_bytes")]
    word_bytes: u32,
    #[serde(default)]
    compute: Option<ComputeDoc>,
}

fn default_word_bytes() -> u32 {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComputeDoc {
    mode: String,
    #[serde(default)]
    table: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    flops: Option<f64>,
    #[serde(default)]
    efficiency: Option<f64>,
}

/// Parses a hardware document: `alpha_s`, `bandwidth_bytes_per_s`,
/// `word_bytes`, and an optional `compute` block.
pub fn parse_hardware(text: &str) -> Result<HardwareModel> {
    let doc: HardwareDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut hw = HardwareModel::new(doc.alpha_s, doc.bandwidth_bytes_per_s, doc.word_bytes)?;
    if let Some(c) = doc.compute {
        let model = match c.mode.as_str() {
            "table" => {
                let table = c.table.ok_or_else(|| Error::invalid("compute.table", "required when mode = \"table\""))?;
                ComputeModel::Table(ComputeTable::new(table)?)
            }
            "throughput" => {
                let flops = c.flops.ok_or_else(|| Error::invalid("compute.flops", "required when mode = \"throughput\""))?;
                ComputeModel::throughput(flops, c.efficiency.unwrap_or(1.0))?
            }
            other => return Err(Error::invalid("compute.mode", format!("unknown mode {other:?}"))),
        };
        hw.compute = Some(model);
    }
    Ok(hw)
}
