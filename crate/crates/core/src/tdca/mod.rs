//! The top-down credit network: state observation, credit generation at a
//! chosen granularity, expansion of credits into parameter updates, and the
//! inner training loop driven by those credits.
//!
//! Two credit modes exist. [`CreditMode::Aggregate`] emits one credit per
//! unit from the batch-level state and expands it with a local rule
//! (`dw_ij = c_j * mean(a_i)`). [`CreditMode::ErrorGated`] emits, per unit,
//! a row of weights over the class errors; every example then receives the
//! credit `c_j(n) = m_j . (y(n) - p(n))` and the update is the batch mean of
//! `c_j(n) * a_i(n)`.

mod checkpoint;
pub mod evolve;
pub mod gaussian;
pub mod inner;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::diffusion::{assign_groups, diffusion_weights, DiffusionKernel, GroupSpec, NeighborStructure};
use crate::error::{Result, TdcaError};
use crate::nn::{init_mlp, per_example_cross_entropy, Activation, LayerSpec, Mlp, ParamVector};

pub use evolve::{evolve_tdca, TaskSpec};
pub use gaussian::GaussianProblem;
pub use inner::{classifier_specs, fitness_of, inner_loop, ClassificationProblem, InnerLoopTrace, InnerOutcome, StepRecord};

pub const CREDITNET_HEADER: &str = "TDCA-CREDITNET v1";

/// Weight of the cross-entropy tie-breaker in classification fitness.
pub const LOSS_TIE_BREAK: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Granularity {
    PerParameter,
    PerNeuron,
    PerGroup(GroupSpec),
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::PerParameter => f.write_str("per-parameter"),
            Granularity::PerNeuron => f.write_str("per-neuron"),
            Granularity::PerGroup(g) => g.fmt(f),
        }
    }
}

impl FromStr for Granularity {
    type Err = TdcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-parameter" => Ok(Granularity::PerParameter),
            "per-neuron" => Ok(Granularity::PerNeuron),
            other => Ok(Granularity::PerGroup(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreditMode {
    Aggregate,
    ErrorGated,
}

/// How an aggregate neuron credit becomes weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionRule {
    /// `dw_ij = c_j * mean_n a_i(n)`.
    PresynapticMean,
    /// `dw_ij = c_j` for every incoming weight.
    Broadcast,
}

/// Optional multiplication of hidden per-example credits by the local
/// activation derivative (error-gated mode only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenGate {
    None,
    Derivative,
}

macro_rules! kebab_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = TdcaError;
            fn from_str(s: &str) -> Result<Self> {
                match s { $($name => Ok($variant),)+ other => Err(TdcaError::Config(format!(
                    "unknown {} `{other}`", stringify!($ty)))) }
            }
        }
    };
}

kebab_enum!(CreditMode { CreditMode::Aggregate => "aggregate", CreditMode::ErrorGated => "error-gated" });
kebab_enum!(ExpansionRule {
    ExpansionRule::PresynapticMean => "presynaptic-mean",
    ExpansionRule::Broadcast => "broadcast",
});
kebab_enum!(HiddenGate { HiddenGate::None => "none", HiddenGate::Derivative => "derivative" });

/// What the credits train.
#[derive(Debug, Clone, PartialEq)]
pub enum BottomUp {
    Classifier(Vec<LayerSpec>),
    /// A bare point in `R^d`; the parameters are the coordinates.
    Point(usize),
}

impl BottomUp {
    pub fn param_count(&self) -> usize {
        match self {
            BottomUp::Classifier(specs) => specs.iter().map(LayerSpec::param_count).sum(),
            BottomUp::Point(d) => *d,
        }
    }

    /// Width of the state vector the credit net observes.
    pub fn state_dim(&self) -> usize {
        match self {
            BottomUp::Classifier(specs) => 2 * specs.last().map_or(0, |s| s.out_dim) + 1,
            BottomUp::Point(d) => d + 1,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            BottomUp::Classifier(specs) => specs.last().map_or(0, |s| s.out_dim),
            BottomUp::Point(_) => 0,
        }
    }
}

/// Everything about a credit network except its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TdcaSettings {
    pub granularity: Granularity,
    pub mode: CreditMode,
    pub rule: ExpansionRule,
    pub gate: HiddenGate,
    /// `eta` for hidden layers (all credits in per-parameter mode).
    pub credit_scale: f64,
    /// `eta` for the output layer; `None` means `credit_scale`.
    pub output_scale: Option<f64>,
    pub hidden_width: usize,
}

impl Default for TdcaSettings {
    fn default() -> Self {
        Self {
            granularity: Granularity::PerNeuron,
            mode: CreditMode::Aggregate,
            rule: ExpansionRule::PresynapticMean,
            gate: HiddenGate::None,
            credit_scale: 0.1,
            output_scale: None,
            hidden_width: 32,
        }
    }
}

impl TdcaSettings {
    pub fn output_eta(&self) -> f64 {
        self.output_scale.unwrap_or(self.credit_scale)
    }

    /// Checks the scales and that the granularity fits `bottom_up`.
    pub fn validate_for(&self, bottom_up: &BottomUp) -> Result<()> {
        if !(self.credit_scale > 0.0 && self.credit_scale.is_finite())
            || !(self.output_eta() > 0.0 && self.output_eta().is_finite())
        {
            return Err(TdcaError::Config("credit scales must be positive and finite".into()));
        }
        CreditLayout::build(&self.granularity, bottom_up, self).map(|_| ())
    }
}

/// Maps a layer's credit units onto its neurons.
#[derive(Debug, Clone, PartialEq)]
pub enum Expansion {
    Identity,
    /// `neurons x units` row-normalized weights.
    Dense(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCredits {
    pub neurons: usize,
    pub units: usize,
    pub expansion: Expansion,
    pub eta: f64,
}

impl LayerCredits {
    /// Per-neuron credits from unit credits.
    pub fn expand(&self, units: &[f64]) -> Array1<f64> {
        match &self.expansion {
            Expansion::Identity => Array1::from(units.to_vec()),
            Expansion::Dense(w) => w.dot(&Array1::from(units.to_vec())),
        }
    }

    /// `neurons x C` from a `units x C` block.
    pub fn expand_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        match &self.expansion {
            Expansion::Identity => m.clone(),
            Expansion::Dense(w) => w.dot(m),
        }
    }
}

/// Credit units per bottom-up layer for a granularity.
#[derive(Debug, Clone, PartialEq)]
pub enum CreditLayout {
    PerParameter { count: usize, eta: f64 },
    Layers(Vec<LayerCredits>),
}

impl CreditLayout {
    pub fn build(granularity: &Granularity, bottom_up: &BottomUp, settings: &TdcaSettings) -> Result<Self> {
        let specs = match (granularity, bottom_up) {
            (Granularity::PerParameter, b) => {
                return Ok(CreditLayout::PerParameter {
                    count: b.param_count(),
                    eta: settings.credit_scale,
                })
            }
            (_, BottomUp::Point(_)) => {
                return Err(TdcaError::Config(
                    "a point target only supports per-parameter credits".into(),
                ))
            }
            (_, BottomUp::Classifier(specs)) => specs,
        };
        let last = specs.len() - 1;
        let mut layers = Vec::with_capacity(specs.len());
        for (t, spec) in specs.iter().enumerate() {
            let eta = if t == last { settings.output_eta() } else { settings.credit_scale };
            let neurons = spec.out_dim;
            let layer = match granularity {
                Granularity::PerGroup(g) if t < last || g.include_outputs => {
                    let (structure, credits) = if t < last {
                        (g.structure, g.credits)
                    } else {
                        let ratio = g.structure.size() as f64 / g.credits as f64;
                        let credits = ((neurons as f64 / ratio).round() as usize).clamp(1, neurons);
                        (NeighborStructure::Line { length: neurons }, credits)
                    };
                    if structure.size() != neurons {
                        return Err(TdcaError::Config(format!(
                            "group structure covers {} neurons but layer {t} has {neurons}",
                            structure.size()
                        )));
                    }
                    let assignment = assign_groups(neurons, credits, &structure)?;
                    let kernel = if g.sigma <= crate::diffusion::SIGMA_LIMIT {
                        DiffusionKernel::new(crate::diffusion::SIGMA_LIMIT)?
                    } else {
                        DiffusionKernel::new(g.sigma)?
                    };
                    LayerCredits {
                        neurons,
                        units: credits,
                        expansion: Expansion::Dense(diffusion_weights(&assignment, &structure, &kernel)),
                        eta,
                    }
                }
                _ => LayerCredits {
                    neurons,
                    units: neurons,
                    expansion: Expansion::Identity,
                    eta,
                },
            };
            layers.push(layer);
        }
        Ok(CreditLayout::Layers(layers))
    }

    /// Number of credit units (scalars in aggregate mode).
    pub fn units(&self) -> usize {
        match self {
            CreditLayout::PerParameter { count, .. } => *count,
            CreditLayout::Layers(layers) => layers.iter().map(|l| l.units).sum(),
        }
    }

    pub fn layers(&self) -> &[LayerCredits] {
        match self {
            CreditLayout::PerParameter { .. } => &[],
            CreditLayout::Layers(layers) => layers,
        }
    }

    /// Multiplies raw credit-net outputs by each block's `eta`.
    fn scale(&self, raw: &mut [f64], per_unit: usize) {
        match self {
            CreditLayout::PerParameter { eta, .. } => raw.iter_mut().for_each(|v| *v *= eta),
            CreditLayout::Layers(layers) => {
                let mut at = 0;
                for l in layers {
                    let len = l.units * per_unit;
                    raw[at..at + len].iter_mut().for_each(|v| *v *= l.eta);
                    at += len;
                }
            }
        }
    }
}

/// Observation fed to the credit network.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub descriptor: StateDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateDescriptor {
    /// Mean output, mean error, mean loss.
    Classification { classes: usize },
    /// Coordinates followed by the function value.
    Point { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreditVector {
    pub values: Vec<f64>,
}

/// Batch-level state: mean output rows, mean `output - target` rows and the
/// mean per-example cross-entropy (`2C + 1` values).
pub fn build_state(outputs: &Array2<f64>, targets: &Array2<f64>) -> Result<StateVector> {
    if outputs.dim() != targets.dim() || outputs.nrows() == 0 {
        return Err(TdcaError::Dimension(format!(
            "state needs matching non-empty outputs {:?} and targets {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    let classes = outputs.ncols();
    let n = outputs.nrows() as f64;
    let mut values = vec![0.0; 2 * classes + 1];
    Zip::from(outputs.rows()).and(targets.rows()).for_each(|p, t| {
        for k in 0..classes {
            values[k] += p[k];
            values[classes + k] += p[k] - t[k];
        }
    });
    for v in values.iter_mut().take(2 * classes) {
        *v /= n;
    }
    values[2 * classes] = per_example_cross_entropy(outputs, targets).sum() / n;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TdcaError::NonFinite("state vector".into()));
    }
    Ok(StateVector {
        values,
        descriptor: StateDescriptor::Classification { classes },
    })
}

pub fn point_state(point: &[f64], value: f64) -> StateVector {
    let mut values = point.to_vec();
    values.push(value);
    StateVector {
        values,
        descriptor: StateDescriptor::Point { dim: point.len() },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdcaNetwork {
    pub net: Mlp,
    pub settings: TdcaSettings,
    pub bottom_up: BottomUp,
    layout: CreditLayout,
}

impl TdcaNetwork {
    /// Fresh credit net: random hidden layer from `seed`, zero output layer,
    /// so the initial credits are all zero.
    pub fn new(settings: TdcaSettings, bottom_up: BottomUp, seed: u64) -> Result<Self> {
        let specs = Self::net_specs(&settings, &bottom_up)?;
        let mut net = init_mlp(&specs, seed)?;
        let last = net.layers().len() - 1;
        let out = &mut net.layers_mut()[last];
        out.weights.fill(0.0);
        out.bias.fill(0.0);
        Self::from_net(net, settings, bottom_up)
    }

    pub fn from_net(net: Mlp, settings: TdcaSettings, bottom_up: BottomUp) -> Result<Self> {
        if let BottomUp::Classifier(specs) = &bottom_up {
            crate::nn::validate_specs(specs)?;
            if specs.last().map(|s| s.activation) != Some(Activation::Softmax) {
                return Err(TdcaError::Config("classifier must end in softmax".into()));
            }
        }
        if !(settings.credit_scale > 0.0) || settings.output_eta() <= 0.0 {
            return Err(TdcaError::Config("credit scales must be positive".into()));
        }
        if settings.mode == CreditMode::ErrorGated
            && (settings.granularity == Granularity::PerParameter || matches!(bottom_up, BottomUp::Point(_)))
        {
            return Err(TdcaError::Config(
                "error-gated credits need per-neuron or grouped credits on a classifier".into(),
            ));
        }
        let layout = CreditLayout::build(&settings.granularity, &bottom_up, &settings)?;
        let expected = Self::net_specs(&settings, &bottom_up)?;
        let got = net.specs();
        if got.first().map(|s| s.in_dim) != expected.first().map(|s| s.in_dim)
            || got.last().map(|s| s.out_dim) != expected.last().map(|s| s.out_dim)
        {
            return Err(TdcaError::Dimension(format!(
                "credit net {} does not fit state {} -> credits {}",
                crate::nn::format_specs(got),
                bottom_up.state_dim(),
                expected.last().map_or(0, |s| s.out_dim)
            )));
        }
        if got.last().map(|s| s.activation) != Some(Activation::Tanh) {
            return Err(TdcaError::Config("credit net must end in tanh".into()));
        }
        Ok(Self {
            net,
            settings,
            bottom_up,
            layout,
        })
    }

    /// `state -> hidden Tanh -> credits Tanh`, or a single Tanh layer when
    /// the hidden width is zero.
    pub fn net_specs(settings: &TdcaSettings, bottom_up: &BottomUp) -> Result<Vec<LayerSpec>> {
        let layout = CreditLayout::build(&settings.granularity, bottom_up, settings)?;
        let per_unit = match settings.mode {
            CreditMode::Aggregate => 1,
            CreditMode::ErrorGated => bottom_up.classes(),
        };
        let out = layout.units() * per_unit;
        let state = bottom_up.state_dim();
        Ok(if settings.hidden_width == 0 {
            vec![LayerSpec::new(state, out, Activation::Tanh)]
        } else {
            vec![
                LayerSpec::new(state, settings.hidden_width, Activation::Tanh),
                LayerSpec::new(settings.hidden_width, out, Activation::Tanh),
            ]
        })
    }

    pub fn layout(&self) -> &CreditLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.flatten().into_values()
    }

    /// Same architecture with new weights.
    pub fn with_params(&self, beta: &[f64]) -> Result<Self> {
        Ok(Self {
            net: Mlp::from_params(self.net.specs(), beta)?,
            settings: self.settings.clone(),
            bottom_up: self.bottom_up.clone(),
            layout: self.layout.clone(),
        })
    }

    /// Same weights retargeted to another classifier with identical credit
    /// dimensions (only the input width may differ).
    pub fn retarget(&self, bottom_up: BottomUp) -> Result<Self> {
        let layout = CreditLayout::build(&self.settings.granularity, &bottom_up, &self.settings)?;
        if layout.units() != self.layout.units() || bottom_up.state_dim() != self.bottom_up.state_dim() {
            return Err(TdcaError::Dimension(
                "credit network is incompatible with the target architecture".into(),
            ));
        }
        Self::from_net(self.net.clone(), self.settings.clone(), bottom_up)
    }

    pub fn credit_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn generate_credits(&self, state: &StateVector) -> Result<CreditVector> {
        if state.values.len() != self.net.input_dim() {
            return Err(TdcaError::Dimension(format!(
                "state has {} values but the credit net expects {}",
                state.values.len(),
                self.net.input_dim()
            )));
        }
        let input = Array2::from_shape_vec((1, state.values.len()), state.values.clone())
            .expect("one row");
        let cache = self.net.evaluate(input.view())?;
        let mut values = cache.output().row(0).to_vec();
        let per_unit = match self.settings.mode {
            CreditMode::Aggregate => 1,
            CreditMode::ErrorGated => self.bottom_up.classes(),
        };
        self.layout.scale(&mut values, per_unit);
        Ok(CreditVector { values })
    }

    /// Per-layer `units x C` gating blocks of an error-gated credit vector.
    pub fn gating_blocks(&self, credits: &CreditVector) -> Vec<Array2<f64>> {
        let classes = self.bottom_up.classes();
        let mut at = 0;
        self.layout
            .layers()
            .iter()
            .map(|l| {
                let len = l.units * classes;
                let block = Array2::from_shape_vec((l.units, classes), credits.values[at..at + len].to_vec())
                    .expect("layout sized");
                at += len;
                block
            })
            .collect()
    }

    /// Converts credits into a parameter update using the network's cached
    /// activations. Error-gated credits also need the batch targets.
    pub fn credits_to_update(
        &self,
        credits: &CreditVector,
        mlp: &Mlp,
        targets: Option<&Array2<f64>>,
    ) -> Result<ParamVector> {
        if credits.values.len() != self.credit_dim() {
            return Err(TdcaError::Dimension(format!(
                "{} credits but the granularity needs {}",
                credits.values.len(),
                self.credit_dim()
            )));
        }
        let cache = mlp
            .last_activations()
            .ok_or_else(|| TdcaError::Missing("forward cache of the bottom-up network".into()))?;
        match self.settings.mode {
            CreditMode::Aggregate => credits_to_update(credits, mlp, &self.layout, self.settings.rule),
            CreditMode::ErrorGated => {
                let targets = targets.ok_or_else(|| {
                    TdcaError::Missing("targets for error-gated credits".into())
                })?;
                let errors = targets - cache.output();
                gated_update(&self.gating_blocks(credits), mlp, &errors, &self.layout, self.settings.gate)
            }
        }
    }
}

/// Aggregate expansion: verbatim for per-parameter credits, otherwise the
/// per-neuron rule after any group diffusion.
pub fn credits_to_update(
    credits: &CreditVector,
    mlp: &Mlp,
    layout: &CreditLayout,
    rule: ExpansionRule,
) -> Result<ParamVector> {
    if credits.values.len() != layout.units() {
        return Err(TdcaError::Dimension(format!(
            "{} credits but the layout needs {}",
            credits.values.len(),
            layout.units()
        )));
    }
    let mut delta = ParamVector::zeros(mlp.layout());
    if let CreditLayout::PerParameter { .. } = layout {
        delta.values_mut().copy_from_slice(&credits.values);
        return Ok(delta);
    }
    let cache = mlp
        .last_activations()
        .ok_or_else(|| TdcaError::Missing("forward cache of the bottom-up network".into()))?;
    if layout.layers().len() != mlp.layers().len() {
        return Err(TdcaError::Dimension("layout does not match the network depth".into()));
    }
    let mut at = 0;
    for (t, layer) in layout.layers().iter().enumerate() {
        let c = layer.expand(&credits.values[at..at + layer.units]);
        at += layer.units;
        let pre = match rule {
            ExpansionRule::PresynapticMean => cache.mean_presynaptic(t),
            ExpansionRule::Broadcast => Array1::ones(mlp.specs()[t].in_dim),
        };
        let dw = outer(&c, &pre);
        delta.set_layer(t, dw.view(), c.view());
    }
    Ok(delta)
}

/// Error-gated expansion: `C_t = E K_t^T` per layer, then
/// `dW_t = C_t^T A_{t-1} / n` and `db_t = mean(C_t)`.
pub fn gated_update(
    blocks: &[Array2<f64>],
    mlp: &Mlp,
    errors: &Array2<f64>,
    layout: &CreditLayout,
    gate: HiddenGate,
) -> Result<ParamVector> {
    let cache = mlp
        .last_activations()
        .ok_or_else(|| TdcaError::Missing("forward cache of the bottom-up network".into()))?;
    let n = errors.nrows() as f64;
    let last = mlp.layers().len() - 1;
    let mut delta = ParamVector::zeros(mlp.layout());
    for (t, (layer, block)) in layout.layers().iter().zip(blocks).enumerate() {
        let k = layer.expand_rows(block);
        let mut c = errors.dot(&k.t());
        if gate == HiddenGate::Derivative && t < last {
            let act = mlp.specs()[t].activation;
            Zip::from(&mut c)
                .and(&cache.activations[t + 1])
                .for_each(|c, &a| *c *= activation_slope(act, a));
        }
        let dw = c.t().dot(&cache.activations[t]) / n;
        let db = c.mean_axis(Axis(0)).expect("non-empty batch");
        delta.set_layer(t, dw.view(), db.view());
    }
    Ok(delta)
}

pub(crate) fn activation_slope(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - a * a,
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => a * (1.0 - a),
        Activation::Identity | Activation::Softmax => 1.0,
    }
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

pub use checkpoint::{load_tdca, save_tdca};
