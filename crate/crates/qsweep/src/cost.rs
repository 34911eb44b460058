//! Closed-form compute and memory cost models.
//!
//! Per-multiplication cost coefficients:
//!
//! | bits | linear M | quadratic M |
//! |------|----------|-------------|
//! | 16   | 16       | 16          |
//! | 8    | 8        | 4           |
//! | 4    | 4        | 1           |
//!
//! The linear model reflects existing hardware, where throughput doubles as
//! operand width halves; the quadratic model reflects multiplier circuit
//! area/power, which scales with the square of the width. The memory
//! coefficient M' equals the bit width under both models.
//!
//! Per-layer compute: `Conv2D = B*Kh*Kw*Aw*Ah*Cin*Cout*M`,
//! `Dense = B*Cin*Cout*M`. Per-layer weight memory:
//! `Conv2D = Kh*Kw*Cin*Cout*M'`, `Dense = Cin*Cout*M'` (biases and other
//! small contributions ignored). Totals are exact integer sums and
//! normalized ratios are exact rationals, so homogeneous-precision ratio
//! laws hold to the last digit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModelKind {
    Linear,
    Quadratic,
}

/// Shape record for one costed layer, as exported in the JSON manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerShape {
    Conv2d {
        name: String,
        batch: u64,
        kernel_h: u64,
        kernel_w: u64,
        out_h: u64,
        out_w: u64,
        c_in: u64,
        c_out: u64,
        bits: u8,
    },
    Dense {
        name: String,
        batch: u64,
        c_in: u64,
        c_out: u64,
        bits: u8,
    },
}

impl LayerShape {
    pub fn name(&self) -> &str {
        match self {
            LayerShape::Conv2d { name, .. } | LayerShape::Dense { name, .. } => name,
        }
    }

    pub fn bits(&self) -> u8 {
        match self {
            LayerShape::Conv2d { bits, .. } | LayerShape::Dense { bits, .. } => *bits,
        }
    }

    pub fn with_bits(&self, bits: u8) -> LayerShape {
        let mut s = self.clone();
        match &mut s {
            LayerShape::Conv2d { bits: b, .. } | LayerShape::Dense { bits: b, .. } => *b = bits,
        }
        s
    }

    fn kind_name(&self) -> &'static str {
        match self {
            LayerShape::Conv2d { .. } => "conv2d",
            LayerShape::Dense { .. } => "dense",
        }
    }
}

/// Compute coefficient M for a bit width under a cost model.
pub fn coefficient(bits: u8, kind: CostModelKind) -> Result<u64> {
    match (kind, bits) {
        (CostModelKind::Linear, 16) => Ok(16),
        (CostModelKind::Linear, 8) => Ok(8),
        (CostModelKind::Linear, 4) => Ok(4),
        (CostModelKind::Quadratic, 16) => Ok(16),
        (CostModelKind::Quadratic, 8) => Ok(4),
        (CostModelKind::Quadratic, 4) => Ok(1),
        _ => Err(Error::UnsupportedBits(bits)),
    }
}

/// Memory coefficient M' (identical under both cost models).
pub fn memory_coefficient(bits: u8) -> Result<u64> {
    match bits {
        16 | 8 | 4 => Ok(bits as u64),
        _ => Err(Error::UnsupportedBits(bits)),
    }
}

/// `B * Kh * Kw * Aw * Ah * Cin * Cout * M` for a convolution layer.
pub fn conv_cost(s: &LayerShape, kind: CostModelKind) -> Result<u128> {
    match s {
        LayerShape::Conv2d {
            batch,
            kernel_h,
            kernel_w,
            out_h,
            out_w,
            c_in,
            c_out,
            bits,
            ..
        } => {
            let m = coefficient(*bits, kind)? as u128;
            Ok(*batch as u128
                * *kernel_h as u128
                * *kernel_w as u128
                * *out_w as u128
                * *out_h as u128
                * *c_in as u128
                * *c_out as u128
                * m)
        }
        other => Err(Error::WrongLayerKind {
            op: "conv_cost",
            got: other.kind_name(),
        }),
    }
}

/// `B * Cin * Cout * M` for a dense layer.
pub fn dense_cost(s: &LayerShape, kind: CostModelKind) -> Result<u128> {
    match s {
        LayerShape::Dense {
            batch,
            c_in,
            c_out,
            bits,
            ..
        } => {
            let m = coefficient(*bits, kind)? as u128;
            Ok(*batch as u128 * *c_in as u128 * *c_out as u128 * m)
        }
        other => Err(Error::WrongLayerKind {
            op: "dense_cost",
            got: other.kind_name(),
        }),
    }
}

pub fn layer_cost(s: &LayerShape, kind: CostModelKind) -> Result<u128> {
    match s {
        LayerShape::Conv2d { .. } => conv_cost(s, kind),
        LayerShape::Dense { .. } => dense_cost(s, kind),
    }
}

/// Weight bits of one layer; batch and spatial dims do not appear.
pub fn memory_bits(s: &LayerShape) -> Result<u128> {
    match s {
        LayerShape::Conv2d {
            kernel_h,
            kernel_w,
            c_in,
            c_out,
            bits,
            ..
        } => Ok(*kernel_h as u128
            * *kernel_w as u128
            * *c_in as u128
            * *c_out as u128
            * memory_coefficient(*bits)? as u128),
        LayerShape::Dense {
            c_in, c_out, bits, ..
        } => Ok(*c_in as u128 * *c_out as u128 * memory_coefficient(*bits)? as u128),
    }
}

/// Exact reduced fraction, used for normalized ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Ratio {
        let g = gcd(num, den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub compute: u128,
    pub memory_bits: u128,
}

/// Per-layer and total costs, optionally normalized against a baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub kind: CostModelKind,
    pub per_layer: Vec<LayerCost>,
    pub total_compute: u128,
    pub total_memory_bits: u128,
    pub normalized_compute: Option<Ratio>,
    pub normalized_memory: Option<Ratio>,
    pub baseline_name: Option<String>,
}

/// Sum per-layer compute and memory costs over the manifest.
pub fn model_cost(shapes: &[LayerShape], kind: CostModelKind) -> Result<CostReport> {
    if shapes.is_empty() {
        return Err(Error::EmptyShapes);
    }
    let mut per_layer = Vec::with_capacity(shapes.len());
    let mut total_compute: u128 = 0;
    let mut total_memory: u128 = 0;
    for s in shapes {
        let compute = layer_cost(s, kind)?;
        let mem = memory_bits(s)?;
        total_compute += compute;
        total_memory += mem;
        per_layer.push(LayerCost {
            name: s.name().to_string(),
            compute,
            memory_bits: mem,
        });
    }
    Ok(CostReport {
        name: "model".into(),
        kind,
        per_layer,
        total_compute,
        total_memory_bits: total_memory,
        normalized_compute: None,
        normalized_memory: None,
        baseline_name: None,
    })
}

/// Same shapes re-tagged to the 16-bit baseline precision.
pub fn baseline_shapes(shapes: &[LayerShape]) -> Vec<LayerShape> {
    shapes.iter().map(|s| s.with_bits(16)).collect()
}

/// Attach exact normalized ratios `total / baseline_total`.
pub fn normalize(report: &CostReport, baseline: &CostReport) -> Result<CostReport> {
    if report.kind != baseline.kind {
        return Err(Error::LayerMismatch(format!(
            "cost model kinds differ: {:?} vs {:?}",
            report.kind, baseline.kind
        )));
    }
    if report.per_layer.len() != baseline.per_layer.len() {
        return Err(Error::LayerMismatch(format!(
            "layer counts differ: {} vs {}",
            report.per_layer.len(),
            baseline.per_layer.len()
        )));
    }
    for (a, b) in report.per_layer.iter().zip(&baseline.per_layer) {
        if a.name != b.name {
            return Err(Error::LayerMismatch(format!(
                "layer {} vs {}",
                a.name, b.name
            )));
        }
    }
    if baseline.total_compute == 0 || baseline.total_memory_bits == 0 {
        return Err(Error::LayerMismatch("baseline has zero total".into()));
    }
    let mut out = report.clone();
    out.normalized_compute = Some(Ratio::new(report.total_compute, baseline.total_compute));
    out.normalized_memory = Some(Ratio::new(
        report.total_memory_bits,
        baseline.total_memory_bits,
    ));
    out.baseline_name = Some(baseline.name.clone());
    Ok(out)
}

/// Convenience: cost of `shapes` normalized against their own 16-bit
/// baseline.
pub fn normalized_model_cost(shapes: &[LayerShape], kind: CostModelKind) -> Result<CostReport> {
    let report = model_cost(shapes, kind)?;
    let baseline = model_cost(&baseline_shapes(shapes), kind)?;
    normalize(&report, &baseline)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(name: &str, bits: u8) -> LayerShape {
        LayerShape::Conv2d {
            name: name.into(),
            batch: 1,
            kernel_h: 3,
            kernel_w: 3,
            out_h: 4,
            out_w: 4,
            c_in: 2,
            c_out: 5,
            bits,
        }
    }

    fn dense(name: &str, c_in: u64, c_out: u64, bits: u8) -> LayerShape {
        LayerShape::Dense {
            name: name.into(),
            batch: 1,
            c_in,
            c_out,
            bits,
        }
    }

    #[test]
    fn coefficient_table_is_verbatim() {
        assert_eq!(coefficient(16, CostModelKind::Linear).unwrap(), 16);
        assert_eq!(coefficient(8, CostModelKind::Linear).unwrap(), 8);
        assert_eq!(coefficient(4, CostModelKind::Linear).unwrap(), 4);
        assert_eq!(coefficient(16, CostModelKind::Quadratic).unwrap(), 16);
        assert_eq!(coefficient(8, CostModelKind::Quadratic).unwrap(), 4);
        assert_eq!(coefficient(4, CostModelKind::Quadratic).unwrap(), 1);
        assert!(coefficient(12, CostModelKind::Linear).is_err());
        for bits in [4u8, 8, 16] {
            assert_eq!(memory_coefficient(bits).unwrap(), bits as u64);
        }
        assert!(memory_coefficient(2).is_err());
    }

    #[test]
    fn conv_cost_examples() {
        let unit = LayerShape::Conv2d {
            name: "u".into(),
            batch: 1,
            kernel_h: 1,
            kernel_w: 1,
            out_h: 1,
            out_w: 1,
            c_in: 1,
            c_out: 1,
            bits: 16,
        };
        assert_eq!(conv_cost(&unit, CostModelKind::Linear).unwrap(), 16);
        assert_eq!(conv_cost(&conv("c", 4), CostModelKind::Linear).unwrap(), 5760);
        assert_eq!(conv_cost(&conv("c", 4), CostModelKind::Quadratic).unwrap(), 1440);
        assert!(conv_cost(&dense("d", 1, 1, 8), CostModelKind::Linear).is_err());
    }

    #[test]
    fn dense_cost_examples() {
        assert_eq!(dense_cost(&dense("d", 1, 1, 16), CostModelKind::Linear).unwrap(), 16);
        assert_eq!(
            dense_cost(&dense("head", 2048, 1000, 8), CostModelKind::Linear).unwrap(),
            16_384_000
        );
        // batch scales linearly
        let mut two = dense("d", 100, 10, 4);
        if let LayerShape::Dense { batch, .. } = &mut two {
            *batch = 2;
        }
        assert_eq!(
            dense_cost(&two, CostModelKind::Linear).unwrap(),
            2 * dense_cost(&dense("d", 100, 10, 4), CostModelKind::Linear).unwrap()
        );
        assert!(dense_cost(&conv("c", 8), CostModelKind::Linear).is_err());
    }

    #[test]
    fn memory_examples() {
        assert_eq!(memory_bits(&conv("c", 4)).unwrap(), 360); // 3*3*2*5*4
        assert_eq!(memory_bits(&dense("d", 10, 10, 8)).unwrap(), 800);
        // 16 vs 8 bit is exactly 2x
        assert_eq!(
            memory_bits(&conv("c", 16)).unwrap(),
            2 * memory_bits(&conv("c", 8)).unwrap()
        );
        // kind-invariant by construction: memory_bits takes no kind
    }

    #[test]
    fn homogeneous_ratio_laws_are_exact() {
        let shapes = vec![conv("a", 8), conv("b", 8), dense("d", 64, 10, 8)];
        let r = normalized_model_cost(&shapes, CostModelKind::Linear).unwrap();
        assert_eq!(r.normalized_compute.unwrap(), Ratio::new(1, 2));
        assert_eq!(r.normalized_memory.unwrap(), Ratio::new(1, 2));

        let shapes4: Vec<_> = shapes.iter().map(|s| s.with_bits(4)).collect();
        let r = normalized_model_cost(&shapes4, CostModelKind::Linear).unwrap();
        assert_eq!(r.normalized_compute.unwrap(), Ratio::new(1, 4));
        let r = normalized_model_cost(&shapes4, CostModelKind::Quadratic).unwrap();
        assert_eq!(r.normalized_compute.unwrap(), Ratio::new(1, 16));
        let r = normalized_model_cost(&shapes, CostModelKind::Quadratic).unwrap();
        assert_eq!(r.normalized_compute.unwrap(), Ratio::new(1, 4));
    }

    #[test]
    fn mixed_precision_ratio_between_extremes() {
        let shapes = vec![conv("a", 4), conv("b", 8), dense("d", 64, 10, 4)];
        let r = normalized_model_cost(&shapes, CostModelKind::Linear).unwrap();
        let v = r.normalized_compute.unwrap().as_f64();
        assert!(v > 0.25 && v < 0.5, "ratio {v}");
    }

    #[test]
    fn totals_match_brute_force_sum() {
        let shapes = vec![
            conv("a", 4),
            conv("b", 8),
            conv("c", 16),
            dense("d", 37, 11, 8),
        ];
        let report = model_cost(&shapes, CostModelKind::Quadratic).unwrap();
        let brute: u128 = shapes
            .iter()
            .map(|s| layer_cost(s, CostModelKind::Quadratic).unwrap())
            .sum();
        assert_eq!(report.total_compute, brute);
        assert_eq!(
            report.total_compute,
            report.per_layer.iter().map(|l| l.compute).sum::<u128>()
        );
    }

    #[test]
    fn cost_is_multiplicative_in_each_dimension() {
        let base = conv("c", 8);
        let base_cost = conv_cost(&base, CostModelKind::Linear).unwrap();
        // doubling any single dimension doubles the cost
        for field in 0..7 {
            let mut s = base.clone();
            if let LayerShape::Conv2d {
                batch,
                kernel_h,
                kernel_w,
                out_h,
                out_w,
                c_in,
                c_out,
                ..
            } = &mut s
            {
                match field {
                    0 => *batch *= 2,
                    1 => *kernel_h *= 2,
                    2 => *kernel_w *= 2,
                    3 => *out_h *= 2,
                    4 => *out_w *= 2,
                    5 => *c_in *= 2,
                    _ => *c_out *= 2,
                }
            }
            assert_eq!(conv_cost(&s, CostModelKind::Linear).unwrap(), 2 * base_cost);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs_error() {
        assert!(model_cost(&[], CostModelKind::Linear).is_err());
        let a = model_cost(&[conv("a", 8)], CostModelKind::Linear).unwrap();
        let b = model_cost(&[conv("b", 16)], CostModelKind::Linear).unwrap();
        assert!(normalize(&a, &b).is_err());
        let c = model_cost(&[conv("a", 16)], CostModelKind::Quadratic).unwrap();
        assert!(normalize(&a, &c).is_err());
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let shapes = vec![conv("a", 4), dense("d", 64, 10, 8)];
        let json = serde_json::to_string(&shapes).unwrap();
        let back: Vec<LayerShape> = serde_json::from_str(&json).unwrap();
        assert_eq!(shapes, back);
    }
}
