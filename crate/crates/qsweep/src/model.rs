//! Scalable ResNet family with per-layer quantization wiring.
//!
//! Topology: an initial convolution (`conv_init`), optional max pool, block
//! groups of bottleneck blocks (1x1 -> 3x3 -> 1x1 convolutions, stride-2
//! downsampling on the 3x3 conv of each group's first block, a projection
//! shortcut on that block), global average pooling, and a dense head. A
//! global filter multiplier scales every convolution width to trade
//! parameters for quality.
//!
//! Every convolution and the dense head is a quantized layer: weights are
//! quantized with dynamic per-output-channel max-abs bounds whenever the
//! layer's precision is not full, while activations stay unquantized until
//! their calibration state freezes, then flow through the quantizer with
//! the frozen per-channel bounds (or through the true integer-domain kernel
//! when the integer forward mode is on). Batch normalization and the
//! residual adds always run in full precision.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use nnkit::graph::{BnState, Mode};
use nnkit::{Graph, Padding, Parameter, Scalar, Tensor, ValueId};
use quantcore::tape_ops::{
    fake_quant_op, fake_quant_weights_op, quantized_conv2d_op, quantized_matmul_op, FakeQuantCfg,
};
use quantcore::{ActQuant, BoundsState, IntPrecision, Signedness, WeightQuant};

use crate::cost::LayerShape;
use crate::error::{Error, Result};

// ---- architecture specification -----------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

/// Scalable architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetSpec {
    /// Blocks per group; ResNet-50 uses [3, 4, 6, 3].
    pub block_group_sizes: Vec<usize>,
    /// Bottleneck (inner) width per group before the multiplier.
    pub base_widths: Vec<usize>,
    /// Downsampling stride of each group (applied on the 3x3 conv and the
    /// projection of the group's first block).
    pub group_strides: Vec<usize>,
    /// Output channels of a block = expansion * width.
    pub expansion: usize,
    pub init_conv: InitConvSpec,
    pub init_max_pool: Option<PoolSpec>,
    pub num_classes: usize,
    /// Global filter multiplier applied to every convolution width.
    pub filter_multiplier: f64,
    pub input_resolution: usize,
    pub input_channels: usize,
}

/// `max(1, round(base * c))`, rounding half away from zero.
pub fn scaled_widths(base_widths: &[usize], c: f64) -> Vec<usize> {
    base_widths
        .iter()
        .map(|&b| ((b as f64 * c).round() as usize).max(1))
        .collect()
}

impl ResNetSpec {
    /// ResNet-50 v1.5 for 224x224 inputs.
    pub fn resnet50(filter_multiplier: f64) -> Self {
        ResNetSpec {
            block_group_sizes: vec![3, 4, 6, 3],
            base_widths: vec![64, 128, 256, 512],
            group_strides: vec![1, 2, 2, 2],
            expansion: 4,
            init_conv: InitConvSpec {
                kernel: 7,
                stride: 2,
                width: 64,
            },
            init_max_pool: Some(PoolSpec {
                window: 3,
                stride: 2,
            }),
            num_classes: 1000,
            filter_multiplier,
            input_resolution: 224,
            input_channels: 3,
        }
    }

    /// Desk-scale reference variant: 32x32 inputs, one bottleneck block per
    /// group, widths [16, 32, 64], 10 classes. Structurally faithful to the
    /// full model (projections, bottlenecks, quantizable first/last layers)
    /// while trainable on a laptop core.
    pub fn mini(filter_multiplier: f64) -> Self {
        ResNetSpec {
            block_group_sizes: vec![1, 1, 1],
            base_widths: vec![16, 32, 64],
            group_strides: vec![1, 2, 2],
            expansion: 4,
            init_conv: InitConvSpec {
                kernel: 3,
                stride: 1,
                width: 16,
            },
            init_max_pool: None,
            num_classes: 10,
            filter_multiplier,
            input_resolution: 32,
            input_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_group_sizes.is_empty()
            || self.block_group_sizes.len() != self.base_widths.len()
            || self.block_group_sizes.len() != self.group_strides.len()
        {
            return Err(Error::Config(format!(
                "inconsistent group lists: {} sizes, {} widths, {} strides",
                self.block_group_sizes.len(),
                self.base_widths.len(),
                self.group_strides.len()
            )));
        }
        if self.filter_multiplier <= 0.0 || !self.filter_multiplier.is_finite() {
            return Err(Error::Config(format!(
                "filter multiplier must be positive, got {}",
                self.filter_multiplier
            )));
        }
        if self.expansion == 0 || self.num_classes == 0 || self.input_channels == 0 {
            return Err(Error::Config("zero-sized spec field".into()));
        }
        if self.init_conv.stride == 0 || self.group_strides.iter().any(|&s| s == 0) {
            return Err(Error::Config("zero stride".into()));
        }
        Ok(())
    }

    /// The sweep covers multipliers in [0.5, 2.0]; values outside are legal
    /// but worth flagging.
    pub fn multiplier_in_sweep_range(&self) -> bool {
        (0.5..=2.0).contains(&self.filter_multiplier)
    }

    /// Widths after applying the filter multiplier.
    pub fn widths(&self) -> Vec<usize> {
        scaled_widths(&self.base_widths, self.filter_multiplier)
    }

    pub fn init_width(&self) -> usize {
        scaled_widths(&[self.init_conv.width], self.filter_multiplier)[0]
    }
}

// ---- per-layer quantization configuration --------------------------------

/// Bit width of one layer (weights and activations share it), or full
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerBits {
    Full,
    Bits(u8),
}

impl LayerBits {
    /// Bit width used by the cost model; full precision is costed as the
    /// 16-bit baseline.
    pub fn cost_bits(&self) -> u8 {
        match self {
            LayerBits::Full => 16,
            LayerBits::Bits(b) => *b,
        }
    }
}

/// Precision assignment: a default plus first/last-layer overrides and
/// optional per-layer-name overrides. Projection layers follow the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerQuantConfig {
    pub default: LayerBits,
    pub first_layer: LayerBits,
    pub last_layer: LayerBits,
    #[serde(default)]
    pub overrides: BTreeMap<String, LayerBits>,
}

impl LayerQuantConfig {
    pub fn uniform(bits: LayerBits) -> Self {
        LayerQuantConfig {
            default: bits,
            first_layer: bits,
            last_layer: bits,
            overrides: BTreeMap::new(),
        }
    }

    fn resolve(&self, name: &str) -> LayerBits {
        if let Some(b) = self.overrides.get(name) {
            return *b;
        }
        match name {
            "conv_init" => self.first_layer,
            "dense" => self.last_layer,
            _ => self.default,
        }
    }
}

/// The four quantization settings swept in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantSettingPreset {
    /// Everything in 4-bit, first and last layers included.
    Int4,
    /// 4-bit everywhere except conv_init and dense in 8-bit.
    Int4FirstLast8,
    /// Everything in 8-bit.
    Int8,
    /// No quantization anywhere (costed as the 16-bit baseline).
    Baseline,
}

impl QuantSettingPreset {
    pub const ALL: [QuantSettingPreset; 4] = [
        QuantSettingPreset::Int4,
        QuantSettingPreset::Int4FirstLast8,
        QuantSettingPreset::Int8,
        QuantSettingPreset::Baseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            QuantSettingPreset::Int4 => "int4",
            QuantSettingPreset::Int4FirstLast8 => "int4_fl8",
            QuantSettingPreset::Int8 => "int8",
            QuantSettingPreset::Baseline => "baseline",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "int4" => Ok(QuantSettingPreset::Int4),
            "int4_fl8" => Ok(QuantSettingPreset::Int4FirstLast8),
            "int8" => Ok(QuantSettingPreset::Int8),
            "baseline" => Ok(QuantSettingPreset::Baseline),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected int4, int4_fl8, int8 or baseline)"
            ))),
        }
    }

    pub fn layer_config(&self) -> LayerQuantConfig {
        match self {
            QuantSettingPreset::Int4 => LayerQuantConfig::uniform(LayerBits::Bits(4)),
            QuantSettingPreset::Int4FirstLast8 => LayerQuantConfig {
                default: LayerBits::Bits(4),
                first_layer: LayerBits::Bits(8),
                last_layer: LayerBits::Bits(8),
                overrides: BTreeMap::new(),
            },
            QuantSettingPreset::Int8 => LayerQuantConfig::uniform(LayerBits::Bits(8)),
            QuantSettingPreset::Baseline => LayerQuantConfig::uniform(LayerBits::Full),
        }
    }
}

// ---- built model ----------------------------------------------------------

type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub kernel: ParamId,
    pub k: usize,
    pub stride: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub bits: LayerBits,
    pub act_signedness: Signedness,
    /// Index into `ModelState::calib`; `None` for full-precision layers.
    pub calib: Option<usize>,
    pub is_projection: bool,
}

#[derive(Debug, Clone)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bits: LayerBits,
    pub act_signedness: Signedness,
    pub calib: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub conv3: ConvLayer,
    pub bn3: BnLayer,
    pub projection: Option<(ConvLayer, BnLayer)>,
}

/// Instrumentation counters filled in during forward passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardCounters {
    /// Tensors that entered an activation quantizer (fake or integer).
    pub act_quant_events: u64,
    /// Weight tensors that entered a quantizer.
    pub weight_quant_events: u64,
    /// EMA statistic updates during calibration.
    pub ema_updates: u64,
}

impl ForwardCounters {
    pub fn reset(&mut self) {
        *self = ForwardCounters::default();
    }
}

/// Mutable per-run state owned by the training loop: BN running statistics,
/// activation-calibration states, and instrumentation counters.
#[derive(Debug, Clone)]
pub struct ModelState<E: Scalar> {
    pub bn: Vec<BnState<E>>,
    pub calib: Vec<BoundsState<E>>,
    pub counters: ForwardCounters,
}

/// Ids of the leaves recorded for one forward pass, aligned with
/// `ResNetModel::params`.
pub struct ForwardPass {
    pub logits: ValueId,
    pub param_leaves: Vec<ValueId>,
}

#[derive(Debug, Clone)]
pub struct ResNetModel<E: Scalar> {
    pub spec: ResNetSpec,
    pub quant: LayerQuantConfig,
    pub init_conv: ConvLayer,
    pub init_bn: BnLayer,
    pub groups: Vec<Vec<Block>>,
    pub dense: DenseLayer,
    pub params: Vec<Parameter<E>>,
    bn_count: usize,
    calib_count: usize,
}

/// Builder-side bookkeeping while assembling layers.
struct Assembler<E: Scalar> {
    params: Vec<Parameter<E>>,
    rng: ChaCha8Rng,
    bn_count: usize,
    calib_count: usize,
    quant: LayerQuantConfig,
}

impl<E: Scalar> Assembler<E> {
    fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor<E> {
        let dist = Normal::new(0.0f64, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data: Vec<E> = (0..n)
            .map(|_| E::from_f64(dist.sample(&mut self.rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("shape/data agree")
    }

    fn push_param(&mut self, name: String, value: Tensor<E>) -> ParamId {
        let id = self.params.len();
        self.params.push(Parameter::new(name, value));
        id
    }

    fn conv(
        &mut self,
        name: String,
        k: usize,
        stride: usize,
        in_ch: usize,
        out_ch: usize,
        act_signedness: Signedness,
        is_projection: bool,
    ) -> ConvLayer {
        let fan_in = (k * k * in_ch) as f64;
        let kernel_t = self.normal_tensor(&[k, k, in_ch, out_ch], (2.0 / fan_in).sqrt());
        let kernel = self.push_param(format!("{name}/kernel"), kernel_t);
        let bits = self.quant.resolve(&name);
        let calib = match bits {
            LayerBits::Full => None,
            LayerBits::Bits(_) => {
                let idx = self.calib_count;
                self.calib_count += 1;
                Some(idx)
            }
        };
        ConvLayer {
            name,
            kernel,
            k,
            stride,
            in_ch,
            out_ch,
            bits,
            act_signedness,
            calib,
            is_projection,
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnLayer {
        let gamma = self.push_param(format!("{name}/gamma"), Tensor::full(&[channels], E::one()));
        let beta = self.push_param(format!("{name}/beta"), Tensor::zeros(&[channels]));
        let state = self.bn_count;
        self.bn_count += 1;
        BnLayer {
            gamma,
            beta,
            state,
            channels,
        }
    }
}

impl<E: Scalar> ResNetModel<E> {
    /// Build the model with seeded parameter initialization: fan-in-scaled
    /// normals for conv/dense weights, BN gamma 1 / beta 0. The same spec,
    /// quant config and seed always produce bit-identical parameters.
    pub fn build(spec: ResNetSpec, quant: LayerQuantConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut asm = Assembler {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_count: 0,
            calib_count: 0,
            quant: quant.clone(),
        };

        // the raw input may be negative, so conv_init quantizes activations
        // with a signed window; everything downstream of a ReLU is unsigned
        let init_w = spec.init_width();
        let init_conv = asm.conv(
            "conv_init".into(),
            spec.init_conv.kernel,
            spec.init_conv.stride,
            spec.input_channels,
            init_w,
            Signedness::Signed,
            false,
        );
        let init_bn = asm.bn("conv_init/bn", init_w);

        let widths = spec.widths();
        let mut groups = Vec::with_capacity(spec.block_group_sizes.len());
        let mut in_ch = init_w;
        for (gi, (&count, &w)) in spec
            .block_group_sizes
            .iter()
            .zip(&widths)
            .enumerate()
        {
            let out_ch = w * spec.expansion;
            let mut blocks = Vec::with_capacity(count);
            for bi in 0..count {
                let stride = if bi == 0 { spec.group_strides[gi] } else { 1 };
                let base = format!("group{gi}.block{bi}");
                let conv1 = asm.conv(
                    format!("{base}.conv1"),
                    1,
                    1,
                    in_ch,
                    w,
                    Signedness::Unsigned,
                    false,
                );
                let bn1 = asm.bn(&format!("{base}.bn1"), w);
                let conv2 = asm.conv(
                    format!("{base}.conv2"),
                    3,
                    stride,
                    w,
                    w,
                    Signedness::Unsigned,
                    false,
                );
                let bn2 = asm.bn(&format!("{base}.bn2"), w);
                let conv3 = asm.conv(
                    format!("{base}.conv3"),
                    1,
                    1,
                    w,
                    out_ch,
                    Signedness::Unsigned,
                    false,
                );
                let bn3 = asm.bn(&format!("{base}.bn3"), out_ch);
                let projection = if bi == 0 {
                    let p = asm.conv(
                        format!("group{gi}.proj"),
                        1,
                        stride,
                        in_ch,
                        out_ch,
                        Signedness::Unsigned,
                        true,
                    );
                    let pbn = asm.bn(&format!("group{gi}.proj/bn"), out_ch);
                    Some((p, pbn))
                } else {
                    None
                };
                blocks.push(Block {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    conv3,
                    bn3,
                    projection,
                });
                in_ch = out_ch;
            }
            groups.push(blocks);
        }

        // dense head: weight fan-in scaled, zero bias, unsigned activations
        // (global average pooling of a ReLU output is nonnegative)
        let in_dim = in_ch;
        let weight_t = {
            let std = (1.0 / in_dim as f64).sqrt();
            asm.normal_tensor(&[in_dim, spec.num_classes], std)
        };
        let weight = asm.push_param("dense/weight".into(), weight_t);
        let bias = asm.push_param("dense/bias".into(), Tensor::zeros(&[spec.num_classes]));
        let bits = asm.quant.resolve("dense");
        let calib = match bits {
            LayerBits::Full => None,
            LayerBits::Bits(_) => {
                let idx = asm.calib_count;
                asm.calib_count += 1;
                Some(idx)
            }
        };
        let dense = DenseLayer {
            name: "dense".into(),
            weight,
            bias,
            in_dim,
            out_dim: spec.num_classes,
            bits,
            act_signedness: Signedness::Unsigned,
            calib,
        };

        Ok(ResNetModel {
            spec,
            quant,
            init_conv,
            init_bn,
            groups,
            dense,
            params: asm.params,
            bn_count: asm.bn_count,
            calib_count: asm.calib_count,
        })
    }

    /// Fresh per-run state: BN statistics at (0, 1) and calibration states
    /// in the collecting phase.
    pub fn init_state(&self, ema_decay: f64) -> Result<ModelState<E>> {
        let mut bn = Vec::with_capacity(self.bn_count);
        let mut calib: Vec<Option<BoundsState<E>>> = vec![None; self.calib_count];
        let mut fill = |conv: &ConvLayer| -> Result<()> {
            if let Some(idx) = conv.calib {
                calib[idx] = Some(BoundsState::new(conv.in_ch, E::from_f64(ema_decay))?);
            }
            Ok(())
        };
        fill(&self.init_conv)?;
        for blocks in &self.groups {
            for b in blocks {
                fill(&b.conv1)?;
                fill(&b.conv2)?;
                fill(&b.conv3)?;
                if let Some((p, _)) = &b.projection {
                    fill(p)?;
                }
            }
        }
        if let Some(idx) = self.dense.calib {
            calib[idx] = Some(BoundsState::new(self.dense.in_dim, E::from_f64(ema_decay))?);
        }
        for _ in 0..self.bn_count {
            bn.push(BnState::new(0)); // placeholder, resized below
        }
        // size BN states from the layer definitions
        let mut set_bn = |l: &BnLayer| {
            bn[l.state] = BnState::new(l.channels);
        };
        set_bn(&self.init_bn);
        for blocks in &self.groups {
            for b in blocks {
                set_bn(&b.bn1);
                set_bn(&b.bn2);
                set_bn(&b.bn3);
                if let Some((_, pbn)) = &b.projection {
                    set_bn(pbn);
                }
            }
        }
        Ok(ModelState {
            bn,
            calib: calib
                .into_iter()
                .map(|c| c.expect("every calib slot assigned"))
                .collect(),
            counters: ForwardCounters::default(),
        })
    }

    pub fn count_params(&self) -> u64 {
        self.params.iter().map(|p| p.value.numel() as u64).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    pub fn num_projections(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.iter())
            .filter(|b| b.projection.is_some())
            .count()
    }

    /// Every quantizable layer: (name, bits, activation signedness,
    /// is-projection). The dense head reports `is_projection = false`.
    pub fn layer_summary(&self) -> Vec<(String, LayerBits, Signedness, bool)> {
        let mut out = Vec::new();
        let mut conv = |c: &ConvLayer| {
            out.push((c.name.clone(), c.bits, c.act_signedness, c.is_projection));
        };
        conv(&self.init_conv);
        for blocks in &self.groups {
            for b in blocks {
                conv(&b.conv1);
                conv(&b.conv2);
                conv(&b.conv3);
                if let Some((p, _)) = &b.projection {
                    conv(p);
                }
            }
        }
        out.push((
            self.dense.name.clone(),
            self.dense.bits,
            self.dense.act_signedness,
            false,
        ));
        out
    }

    /// Shape records for the cost model, walking the topology at the given
    /// batch size (1 for per-image inference cost).
    pub fn layer_shapes(&self, batch: usize) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        let mut res = self.spec.input_resolution;

        let conv_shape = |c: &ConvLayer, out_res: usize, batch: usize| LayerShape::Conv2d {
            name: c.name.clone(),
            batch: batch as u64,
            kernel_h: c.k as u64,
            kernel_w: c.k as u64,
            out_h: out_res as u64,
            out_w: out_res as u64,
            c_in: c.in_ch as u64,
            c_out: c.out_ch as u64,
            bits: c.bits.cost_bits(),
        };

        res = res.div_ceil(self.init_conv.stride);
        shapes.push(conv_shape(&self.init_conv, res, batch));
        if let Some(pool) = &self.init_max_pool() {
            res = res.div_ceil(pool.stride);
        }
        for blocks in &self.groups {
            for b in blocks {
                // conv1 runs at the block input resolution; conv2 applies
                // the stride; conv3 and the projection land on the output
                shapes.push(conv_shape(&b.conv1, res, batch));
                let out_res = res.div_ceil(b.conv2.stride);
                shapes.push(conv_shape(&b.conv2, out_res, batch));
                shapes.push(conv_shape(&b.conv3, out_res, batch));
                if let Some((p, _)) = &b.projection {
                    shapes.push(conv_shape(p, out_res, batch));
                }
                res = out_res;
            }
        }
        shapes.push(LayerShape::Dense {
            name: self.dense.name.clone(),
            batch: batch as u64,
            c_in: self.dense.in_dim as u64,
            c_out: self.dense.out_dim as u64,
            bits: self.dense.bits.cost_bits(),
        });
        shapes
    }

    fn init_max_pool(&self) -> Option<PoolSpec> {
        self.spec.init_max_pool
    }

    // ---- forward pass ----------------------------------------------------

    /// Record one forward pass on the tape. `integer_forward` switches the
    /// frozen-bounds path from fake quantization to the true integer-domain
    /// kernels.
    pub fn forward(
        &self,
        g: &mut Graph<E>,
        input: Tensor<E>,
        state: &mut ModelState<E>,
        mode: Mode,
        integer_forward: bool,
    ) -> Result<ForwardPass> {
        let param_leaves: Vec<ValueId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone()))
            .collect();
        let x = g.leaf(input);

        let mut h = self.conv_forward(g, &self.init_conv, x, &param_leaves, state, mode, integer_forward)?;
        h = self.bn_relu(g, &self.init_bn, h, &param_leaves, state, mode)?;
        if let Some(pool) = self.init_max_pool() {
            h = g.max_pool(h, pool.window, pool.stride, Padding::Same)?;
        }

        for blocks in &self.groups {
            for b in blocks {
                let block_in = h;
                let mut y = self.conv_forward(g, &b.conv1, block_in, &param_leaves, state, mode, integer_forward)?;
                y = self.bn_relu(g, &b.bn1, y, &param_leaves, state, mode)?;
                y = self.conv_forward(g, &b.conv2, y, &param_leaves, state, mode, integer_forward)?;
                y = self.bn_relu(g, &b.bn2, y, &param_leaves, state, mode)?;
                y = self.conv_forward(g, &b.conv3, y, &param_leaves, state, mode, integer_forward)?;
                y = self.bn_only(g, &b.bn3, y, &param_leaves, state, mode)?;

                let shortcut = match &b.projection {
                    Some((p, pbn)) => {
                        let s = self.conv_forward(g, p, block_in, &param_leaves, state, mode, integer_forward)?;
                        self.bn_only(g, pbn, s, &param_leaves, state, mode)?
                    }
                    None => block_in,
                };
                let sum = g.add(y, shortcut)?;
                h = g.relu(sum);
            }
        }

        let pooled = g.global_avg_pool(h)?;
        let logits = self.dense_forward(g, pooled, &param_leaves, state, mode, integer_forward)?;
        Ok(ForwardPass {
            logits,
            param_leaves,
        })
    }

    fn bn_relu(
        &self,
        g: &mut Graph<E>,
        bn: &BnLayer,
        x: ValueId,
        leaves: &[ValueId],
        state: &mut ModelState<E>,
        mode: Mode,
    ) -> Result<ValueId> {
        let y = self.bn_only(g, bn, x, leaves, state, mode)?;
        Ok(g.relu(y))
    }

    fn bn_only(
        &self,
        g: &mut Graph<E>,
        bn: &BnLayer,
        x: ValueId,
        leaves: &[ValueId],
        state: &mut ModelState<E>,
        mode: Mode,
    ) -> Result<ValueId> {
        Ok(g.batch_norm(
            x,
            leaves[bn.gamma],
            leaves[bn.beta],
            &mut state.bn[bn.state],
            mode,
        )?)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_forward(
        &self,
        g: &mut Graph<E>,
        layer: &ConvLayer,
        x: ValueId,
        leaves: &[ValueId],
        state: &mut ModelState<E>,
        mode: Mode,
        integer_forward: bool,
    ) -> Result<ValueId> {
        let w = leaves[layer.kernel];
        let bits = match layer.bits {
            LayerBits::Full => {
                return Ok(g.conv2d(x, w, layer.stride, Padding::Same)?);
            }
            LayerBits::Bits(b) => b,
        };
        let w_prec = IntPrecision::new(bits, Signedness::Signed)?;
        let act_prec = IntPrecision::new(bits, layer.act_signedness)?;
        let calib = &mut state.calib[layer.calib.expect("quantized conv has calib state")];

        if !calib.activations_quantized() {
            if mode == Mode::Train {
                if let BoundsState::Calibrating(t) = calib {
                    let channel_axis = g.value(x).shape().len() - 1;
                    t.update(g.value(x), channel_axis)?;
                    state.counters.ema_updates += 1;
                }
            }
            let wq = fake_quant_weights_op(g, w, w_prec)?;
            state.counters.weight_quant_events += 1;
            return Ok(g.conv2d(x, wq, layer.stride, Padding::Same)?);
        }

        let bounds = calib.frozen_bounds().expect("frozen").to_vec();
        state.counters.act_quant_events += 1;
        if integer_forward {
            state.counters.weight_quant_events += 1;
            let bound = bounds.iter().cloned().fold(E::zero(), E::max);
            Ok(quantized_conv2d_op(
                g,
                x,
                w,
                layer.stride,
                Padding::Same,
                ActQuant::Quantized {
                    precision: act_prec,
                    bound,
                },
                WeightQuant::Quantized(w_prec),
            )?)
        } else {
            let xq = fake_quant_op(
                g,
                x,
                FakeQuantCfg {
                    precision: act_prec,
                    bounds,
                    channel_axis: 3,
                },
            )?;
            let wq = fake_quant_weights_op(g, w, w_prec)?;
            state.counters.weight_quant_events += 1;
            Ok(g.conv2d(xq, wq, layer.stride, Padding::Same)?)
        }
    }

    fn dense_forward(
        &self,
        g: &mut Graph<E>,
        x: ValueId,
        leaves: &[ValueId],
        state: &mut ModelState<E>,
        mode: Mode,
        integer_forward: bool,
    ) -> Result<ValueId> {
        let w = leaves[self.dense.weight];
        let b = leaves[self.dense.bias];
        let bits = match self.dense.bits {
            LayerBits::Full => {
                let y = g.matmul(x, w)?;
                return Ok(g.bias_add(y, b)?);
            }
            LayerBits::Bits(bits) => bits,
        };
        let w_prec = IntPrecision::new(bits, Signedness::Signed)?;
        let act_prec = IntPrecision::new(bits, self.dense.act_signedness)?;
        let calib = &mut state.calib[self.dense.calib.expect("quantized dense has calib state")];

        let y = if !calib.activations_quantized() {
            if mode == Mode::Train {
                if let BoundsState::Calibrating(t) = calib {
                    t.update(g.value(x), 1)?;
                    state.counters.ema_updates += 1;
                }
            }
            let wq = fake_quant_weights_op(g, w, w_prec)?;
            state.counters.weight_quant_events += 1;
            g.matmul(x, wq)?
        } else {
            let bounds = calib.frozen_bounds().expect("frozen").to_vec();
            state.counters.act_quant_events += 1;
            if integer_forward {
                state.counters.weight_quant_events += 1;
                let bound = bounds.iter().cloned().fold(E::zero(), E::max);
                quantized_matmul_op(
                    g,
                    x,
                    w,
                    ActQuant::Quantized {
                        precision: act_prec,
                        bound,
                    },
                    WeightQuant::Quantized(w_prec),
                )?
            } else {
                let xq = fake_quant_op(
                    g,
                    x,
                    FakeQuantCfg {
                        precision: act_prec,
                        bounds,
                        channel_axis: 1,
                    },
                )?;
                let wq = fake_quant_weights_op(g, w, w_prec)?;
                state.counters.weight_quant_events += 1;
                g.matmul(xq, wq)?
            }
        };
        Ok(g.bias_add(y, b)?)
    }

    /// Named tensors for checkpointing: parameters, momentum buffers, BN
    /// statistics and frozen bounds.
    pub fn state_tensors(&self, state: &ModelState<E>) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        for p in &self.params {
            out.push((format!("param/{}", p.name), p.value.clone()));
            out.push((format!("momentum/{}", p.name), p.momentum_buf.clone()));
        }
        for (i, bn) in state.bn.iter().enumerate() {
            out.push((
                format!("bn_state/{i}/mean"),
                Tensor::from_vec(&[bn.running_mean.len()], bn.running_mean.clone())
                    .expect("bn state"),
            ));
            out.push((
                format!("bn_state/{i}/var"),
                Tensor::from_vec(&[bn.running_var.len()], bn.running_var.clone())
                    .expect("bn state"),
            ));
        }
        for (i, c) in state.calib.iter().enumerate() {
            if let Some(b) = c.frozen_bounds() {
                out.push((
                    format!("bounds/{i}"),
                    Tensor::from_vec(&[b.len()], b.to_vec()).expect("bounds"),
                ));
            }
        }
        out
    }
}
