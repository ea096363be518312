//! GRU baseline cell, the GRUBE ensemble cell and sequence unrolling.
//!
//! Both cells use the gate layout
//!
//! ```text
//! F = σ([x, h] W_f + b_f)            reset
//! Z = σ([x, h] W_z + b_z)            update
//! C = tanh([x, F ⊙ h] W_c + b_c)     candidate
//! h' = (1 − Z) ⊙ h + Z ⊙ C
//! ```
//!
//! The baseline carries two bias vectors per gate (input and hidden side).
//! In GRUBE every enabled gate is an [`EnsembleLinear`] with per-member bias
//! and no shared bias; a gate left out of the mask is a plain shared-weight
//! transform with one shared bias.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AdapterMask, DenseLinear, EnsembleLinear};
use crate::numcore::{Rng, Tensor, Var};
use crate::params::{Graph, ParamId, ParamSet};

/// Which GRUBE transforms use ensemble adapters: candidate (C), update (Z), reset (F).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GateMask {
    pub c: bool,
    pub z: bool,
    pub f: bool,
}

impl GateMask {
    pub const ALL: Self = Self {
        c: true,
        z: true,
        f: true,
    };

    /// The seven non-empty masks: C, Z, F, CZ, CF, ZF, CZF.
    pub fn ablation_grid() -> Vec<Self> {
        ["C", "Z", "F", "CZ", "CF", "ZF", "CZF"]
            .iter()
            .map(|s| s.parse().expect("static mask"))
            .collect()
    }

    pub fn count(&self) -> usize {
        usize::from(self.c) + usize::from(self.z) + usize::from(self.f)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        (!self.c || other.c) && (!self.z || other.z) && (!self.f || other.f)
    }
}

impl Default for GateMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for GateMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count() == 0 {
            return f.write_str("none");
        }
        for (on, ch) in [(self.c, 'C'), (self.z, 'Z'), (self.f, 'F')] {
            if on {
                write!(f, "{ch}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for GateMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Self {
            c: false,
            z: false,
            f: false,
        };
        if s.eq_ignore_ascii_case("none") {
            return Ok(m);
        }
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'C' => m.c = true,
                'Z' => m.z = true,
                'F' => m.f = true,
                other => return Err(Error::Config(format!("unknown gate '{other}' in \"{s}\""))),
            }
        }
        Ok(m)
    }
}

impl TryFrom<String> for GateMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GateMask> for String {
    fn from(m: GateMask) -> String {
        m.to_string()
    }
}

/// Common interface of the recurrent cells.
pub trait RecurrentCell {
    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    /// Rows per sample in the hidden state (1 for plain cells, K for GRUBE).
    fn members(&self) -> usize;
    fn step(&self, g: &Graph<'_>, x: Var, h: Var) -> Result<Var>;
    fn param_count(&self) -> usize;
}

fn check_step(g: &Graph<'_>, x: Var, h: Var, p: usize, q: usize, members: usize) -> Result<()> {
    let (xr, xc) = g.tape.dims(x);
    let (hr, hc) = g.tape.dims(h);
    if xc != p || hc != q || xr != hr {
        return Err(Error::shape("recurrent_step", &g.tape.shape(x), &g.tape.shape(h)));
    }
    if hr % members != 0 {
        return Err(Error::Contract(format!(
            "{hr} hidden rows are not grouped into {members} members"
        )));
    }
    Ok(())
}

fn combine(g: &Graph<'_>, z: Var, h: Var, candidate: Var) -> Result<Var> {
    let t = g.tape;
    let keep = t.affine(z, -1.0, 1.0);
    let old = t.mul(keep, h)?;
    let new = t.mul(z, candidate)?;
    t.add(old, new)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TwoBiasGate {
    linear: DenseLinear,
    hidden_bias: ParamId,
}

impl TwoBiasGate {
    fn new(params: &mut ParamSet, name: &str, p: usize, q: usize, rng: &Rng) -> Self {
        let linear = DenseLinear::new(params, name, p + q, q, rng);
        // Re-draw with the recurrent fan-in convention ±1/√q.
        let bound = 1.0 / (q as f64).sqrt();
        let mut wr = rng.fork(&format!("{name}.W"));
        for v in params.get_mut(linear.weight).data_mut() {
            *v = wr.uniform_range(-bound, bound);
        }
        let hidden_bias = params.add(format!("{name}.b_hid"), Tensor::zeros(&[1, q]));
        Self {
            linear,
            hidden_bias,
        }
    }

    fn forward(&self, g: &Graph<'_>, z: Var) -> Result<Var> {
        let y = self.linear.forward(g, z)?;
        g.tape.add_tiled(y, g.var(self.hidden_bias))
    }

    fn param_count(&self) -> usize {
        self.linear.param_count() + self.linear.out_dim
    }
}

/// Plain GRU cell with input-side and hidden-side bias vectors per gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    reset: TwoBiasGate,
    update: TwoBiasGate,
    candidate: TwoBiasGate,
}

impl GruCell {
    pub fn new(params: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &Rng) -> Self {
        let (p, q) = (input_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            reset: TwoBiasGate::new(params, &format!("{name}.f"), p, q, rng),
            update: TwoBiasGate::new(params, &format!("{name}.z"), p, q, rng),
            candidate: TwoBiasGate::new(params, &format!("{name}.c"), p, q, rng),
        }
    }

    /// Parameter handles of one gate: (weights, input bias, hidden bias).
    pub fn gate_params(&self, gate: char) -> (ParamId, ParamId, ParamId) {
        let g = match gate {
            'f' | 'F' => &self.reset,
            'z' | 'Z' => &self.update,
            _ => &self.candidate,
        };
        (g.linear.weight, g.linear.bias, g.hidden_bias)
    }
}

/// One GRU update for `n` rows.
pub fn gru_step(cell: &GruCell, g: &Graph<'_>, x: Var, h: Var) -> Result<Var> {
    check_step(g, x, h, cell.input_dim, cell.hidden_dim, 1)?;
    let t = g.tape;
    let xh = t.concat_cols(x, h)?;
    let f = t.sigmoid(cell.reset.forward(g, xh)?);
    let z = t.sigmoid(cell.update.forward(g, xh)?);
    let fh = t.mul(f, h)?;
    let xfh = t.concat_cols(x, fh)?;
    let c = t.tanh(cell.candidate.forward(g, xfh)?);
    combine(g, z, h, c)
}

impl RecurrentCell for GruCell {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
    fn members(&self) -> usize {
        1
    }
    fn step(&self, g: &Graph<'_>, x: Var, h: Var) -> Result<Var> {
        gru_step(self, g, x, h)
    }
    /// `3·(q·(p+q) + 2q)`.
    fn param_count(&self) -> usize {
        self.reset.param_count() + self.update.param_count() + self.candidate.param_count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GrubeGate {
    Ensemble(EnsembleLinear),
    Shared(DenseLinear),
}

impl GrubeGate {
    fn forward(&self, g: &Graph<'_>, z: Var) -> Result<Var> {
        match self {
            GrubeGate::Ensemble(l) => l.forward(g, z),
            GrubeGate::Shared(l) => l.forward(g, z),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            GrubeGate::Ensemble(l) => l.param_count(),
            GrubeGate::Shared(l) => l.param_count(),
        }
    }

    pub fn as_ensemble(&self) -> Option<&EnsembleLinear> {
        match self {
            GrubeGate::Ensemble(l) => Some(l),
            GrubeGate::Shared(_) => None,
        }
    }
}

/// GRU cell whose gate transforms are BatchEnsemble layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrubeCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub members: usize,
    pub gate_mask: GateMask,
    pub reset: GrubeGate,
    pub update: GrubeGate,
    pub candidate: GrubeGate,
}

impl GrubeCell {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        members: usize,
        gate_mask: GateMask,
        adapters: AdapterMask,
        rng: &Rng,
    ) -> Result<Self> {
        let (p, q) = (input_dim, hidden_dim);
        let mut make = |suffix: &str, enabled: bool| -> Result<GrubeGate> {
            let gname = format!("{name}.{suffix}");
            let gate = if enabled {
                GrubeGate::Ensemble(EnsembleLinear::new(params, &gname, p + q, q, members, adapters, rng)?)
            } else {
                GrubeGate::Shared(DenseLinear::new(params, &gname, p + q, q, rng))
            };
            // Recurrent fan-in convention ±1/√q for the shared weights.
            let w = match &gate {
                GrubeGate::Ensemble(l) => l.weight,
                GrubeGate::Shared(l) => l.weight,
            };
            let bound = 1.0 / (q as f64).sqrt();
            let mut wr = rng.fork(&format!("{gname}.W"));
            for v in params.get_mut(w).data_mut() {
                *v = wr.uniform_range(-bound, bound);
            }
            Ok(gate)
        };
        let reset = make("f", gate_mask.f)?;
        let update = make("z", gate_mask.z)?;
        let candidate = make("c", gate_mask.c)?;
        Ok(Self {
            input_dim,
            hidden_dim,
            members,
            gate_mask,
            reset,
            update,
            candidate,
        })
    }

    pub fn ensemble_gates(&self) -> impl Iterator<Item = &EnsembleLinear> {
        [&self.reset, &self.update, &self.candidate]
            .into_iter()
            .filter_map(GrubeGate::as_ensemble)
    }
}

/// Advances all `K` members' hidden states in one pass over member-grouped rows.
pub fn grube_step(cell: &GrubeCell, g: &Graph<'_>, x: Var, h: Var) -> Result<Var> {
    check_step(g, x, h, cell.input_dim, cell.hidden_dim, cell.members)?;
    let t = g.tape;
    let xh = t.concat_cols(x, h)?;
    let f = t.sigmoid(cell.reset.forward(g, xh)?);
    let z = t.sigmoid(cell.update.forward(g, xh)?);
    let fh = t.mul(f, h)?;
    let xfh = t.concat_cols(x, fh)?;
    let c = t.tanh(cell.candidate.forward(g, xfh)?);
    combine(g, z, h, c)
}

impl RecurrentCell for GrubeCell {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
    fn members(&self) -> usize {
        self.members
    }
    fn step(&self, g: &Graph<'_>, x: Var, h: Var) -> Result<Var> {
        grube_step(self, g, x, h)
    }
    fn param_count(&self) -> usize {
        self.reset.param_count() + self.update.param_count() + self.candidate.param_count()
    }
}

/// Applies `cell` over an `n×L×p` sequence starting from `h0` and returns
/// the hidden state after every step (the last entry is the final state).
///
/// When `h0` has `n·K` rows for a `K`-member cell, each step's `n` input rows
/// are replicated `K` times in member-grouped order.
pub fn unroll<C: RecurrentCell + ?Sized>(
    cell: &C,
    g: &Graph<'_>,
    x_seq: &Tensor,
    h0: Var,
) -> Result<Vec<Var>> {
    let shape = x_seq.shape();
    if shape.len() != 3 {
        return Err(Error::Contract(format!("sequence must be n×L×p, got {shape:?}")));
    }
    let (n, len, p) = (shape[0], shape[1], shape[2]);
    if len == 0 {
        return Err(Error::Parameter("cannot unroll an empty sequence".into()));
    }
    let (hr, _) = g.tape.dims(h0);
    let replicate = if hr == n { 1 } else { cell.members() };
    if hr != n * replicate {
        return Err(Error::shape("unroll", shape, &g.tape.shape(h0)));
    }
    let mut states = Vec::with_capacity(len);
    let mut h = h0;
    for step in 0..len {
        let mut xt = Vec::with_capacity(n * p);
        for i in 0..n {
            let base = (i * len + step) * p;
            xt.extend_from_slice(&x_seq.data()[base..base + p]);
        }
        let xt = Tensor::matrix(n, p, xt)?.repeat_rows(replicate)?;
        h = cell.step(g, g.tape.constant(xt), h)?;
        states.push(h);
    }
    Ok(states)
}
