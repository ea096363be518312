//! Dense and BatchEnsemble linear layers, dropout, adapter initialization and
//! the adapter orthogonality penalty.
//!
//! An [`EnsembleLinear`] holds one shared weight matrix `W` (`p×q`) and three
//! per-member stacks: input scalings `R` (`K×p`), output scalings `S` (`K×q`)
//! and biases `B` (`K×q`). For an input whose rows are grouped so that row
//! `i·K + k` belongs to member `k`, the layer computes
//! `((Z ⊙ R) W) ⊙ S + B` with the adapter rows broadcast per member.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tape, Tensor, Var};
use crate::params::{Graph, ParamId, ParamSet};

/// Which adapter stacks an ensemble layer carries. A disabled stack behaves
/// as its neutral element (`R, S ≡ 1`, `B ≡ 0`) and contributes no parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AdapterMask {
    pub r: bool,
    pub s: bool,
    pub b: bool,
}

impl AdapterMask {
    pub const ALL: Self = Self {
        r: true,
        s: true,
        b: true,
    };
    pub const NONE: Self = Self {
        r: false,
        s: false,
        b: false,
    };

    /// All eight subsets, ordered by size then by R, S, B.
    pub fn all_subsets() -> Vec<Self> {
        let mut v: Vec<Self> = (0..8u8)
            .map(|bits| Self {
                r: bits & 1 != 0,
                s: bits & 2 != 0,
                b: bits & 4 != 0,
            })
            .collect();
        v.sort_by_key(|m| (m.count(), !m.r, !m.s, !m.b));
        v
    }

    pub fn count(&self) -> usize {
        usize::from(self.r) + usize::from(self.s) + usize::from(self.b)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        (!self.r || other.r) && (!self.s || other.s) && (!self.b || other.b)
    }
}

impl Default for AdapterMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for AdapterMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count() == 0 {
            return f.write_str("none");
        }
        for (on, c) in [(self.r, 'R'), (self.s, 'S'), (self.b, 'B')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for AdapterMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(Self::NONE);
        }
        let mut m = Self::NONE;
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'R' => m.r = true,
                'S' => m.s = true,
                'B' => m.b = true,
                other => {
                    return Err(Error::Config(format!("unknown adapter '{other}' in \"{s}\"")))
                }
            }
        }
        Ok(m)
    }
}

impl TryFrom<String> for AdapterMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AdapterMask> for String {
    fn from(m: AdapterMask) -> String {
        m.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Entries of R and S drawn as ±1 with probability ½; B = 0.
    #[default]
    RandomSign,
    /// R and S with orthonormal rows from a QR factorization of a Gaussian draw; B = 0.
    Orthogonal,
    /// R = S = 1, B = 0: every member starts as the shared layer.
    Neutral,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_sign" | "random-sign" | "sign" => Ok(Self::RandomSign),
            "orthogonal" | "ortho" => Ok(Self::Orthogonal),
            "neutral" => Ok(Self::Neutral),
            _ => Err(Error::Config(format!("unknown init scheme \"{s}\""))),
        }
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Plain affine layer `Z W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLinear {
    /// Weights uniform on `±1/√p`, bias zero. Draws come from a stream keyed
    /// by `name`, so the layer's initialization does not depend on what else
    /// the model contains.
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &Rng) -> Self {
        let mut wr = rng.fork(&format!("{name}.W"));
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = params.add(
            format!("{name}.W"),
            uniform_tensor(&[in_dim, out_dim], bound, &mut wr),
        );
        let bias = params.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, g: &Graph<'_>, z: Var) -> Result<Var> {
        let (_, cols) = g.tape.dims(z);
        if cols != self.in_dim {
            return Err(Error::shape(
                "dense_forward",
                &g.tape.shape(z),
                &[self.in_dim, self.out_dim],
            ));
        }
        let zw = g.tape.matmul(z, g.var(self.weight))?;
        g.tape.add_tiled(zw, g.var(self.bias))
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// BatchEnsemble linear layer with `members` rank-1 adapter sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub members: usize,
    pub weight: ParamId,
    pub r: Option<ParamId>,
    pub s: Option<ParamId>,
    pub b: Option<ParamId>,
}

impl EnsembleLinear {
    /// Shared weights uniform on `±1/√p`; adapters start neutral
    /// (`R = S = 1`, `B = 0`) until [`init_adapters`] is applied.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        members: usize,
        adapters: AdapterMask,
        rng: &Rng,
    ) -> Result<Self> {
        if members == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        let mut wr = rng.fork(&format!("{name}.W"));
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = params.add(
            format!("{name}.W"),
            uniform_tensor(&[in_dim, out_dim], bound, &mut wr),
        );
        let r = adapters
            .r
            .then(|| params.add(format!("{name}.R"), Tensor::ones(&[members, in_dim])));
        let s = adapters
            .s
            .then(|| params.add(format!("{name}.S"), Tensor::ones(&[members, out_dim])));
        let b = adapters
            .b
            .then(|| params.add(format!("{name}.B"), Tensor::zeros(&[members, out_dim])));
        Ok(Self {
            in_dim,
            out_dim,
            members,
            weight,
            r,
            s,
            b,
        })
    }

    pub fn adapters(&self) -> AdapterMask {
        AdapterMask {
            r: self.r.is_some(),
            s: self.s.is_some(),
            b: self.b.is_some(),
        }
    }

    /// `((Z ⊙ R) W) ⊙ S + B` on member-grouped rows; the nonlinearity is left to the caller.
    pub fn forward(&self, g: &Graph<'_>, z: Var) -> Result<Var> {
        let (rows, cols) = g.tape.dims(z);
        if cols != self.in_dim {
            return Err(Error::shape(
                "be_forward",
                &g.tape.shape(z),
                &[self.in_dim, self.out_dim],
            ));
        }
        if rows % self.members != 0 {
            return Err(Error::Contract(format!(
                "be_forward: {rows} rows are not grouped into {} members",
                self.members
            )));
        }
        let t = g.tape;
        let mut h = z;
        if let Some(r) = self.r {
            h = t.mul_tiled(h, g.var(r))?;
        }
        h = t.matmul(h, g.var(self.weight))?;
        if let Some(s) = self.s {
            h = t.mul_tiled(h, g.var(s))?;
        }
        if let Some(b) = self.b {
            h = t.add_tiled(h, g.var(b))?;
        }
        Ok(h)
    }

    /// `p·q + K·(p·[R] + q·[S] + q·[B])`.
    pub fn param_count(&self) -> usize {
        let m = self.adapters();
        self.in_dim * self.out_dim
            + self.members
                * (self.in_dim * usize::from(m.r)
                    + self.out_dim * usize::from(m.s)
                    + self.out_dim * usize::from(m.b))
    }

    /// Adapter stacks (R, S) whose orthogonality can be enforced, i.e. `K ≤ columns`.
    pub fn orthogonalizable_stacks(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        if let Some(r) = self.r {
            if self.members <= self.in_dim {
                v.push(r);
            }
        }
        if let Some(s) = self.s {
            if self.members <= self.out_dim {
                v.push(s);
            }
        }
        v
    }
}

/// `K×dim` matrix with orthonormal rows from the Q factor of a Gaussian `dim×K` draw.
pub fn orthonormal_rows(k: usize, dim: usize, rng: &mut Rng) -> Result<Tensor> {
    if k > dim {
        return Err(Error::InfeasibleOrthogonality { k, dim });
    }
    let draw = DMatrix::from_fn(dim, k, |_, _| rng.normal());
    let qr = draw.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = vec![0.0; k * dim];
    for row in 0..k {
        // Sign-normalize against diag(R) so the factor is unique.
        let sign = if r[(row, row)] < 0.0 { -1.0 } else { 1.0 };
        for col in 0..dim {
            out[row * dim + col] = sign * q[(col, row)];
        }
    }
    Tensor::matrix(k, dim, out)
}

fn fill_stack(params: &mut ParamSet, id: ParamId, scheme: InitScheme, rng: &mut Rng) -> Result<()> {
    let shape = params.get(id).shape().to_vec();
    let fresh = match scheme {
        InitScheme::RandomSign => {
            let n = shape.iter().product();
            Tensor::new(&shape, (0..n).map(|_| rng.sign()).collect())?
        }
        InitScheme::Orthogonal => orthonormal_rows(shape[0], shape[1], rng)?,
        InitScheme::Neutral => Tensor::ones(&shape),
    };
    params
        .get_mut(id)
        .data_mut()
        .copy_from_slice(fresh.data());
    Ok(())
}

fn reset_bias(params: &mut ParamSet, layer: &EnsembleLinear) {
    if let Some(b) = layer.b {
        params.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Initializes the enabled adapter stacks of `layer`.
///
/// `Orthogonal` requires `K ≤ p` for R and `K ≤ q` for S and fails otherwise.
pub fn init_adapters(
    params: &mut ParamSet,
    layer: &EnsembleLinear,
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<()> {
    if scheme == InitScheme::Orthogonal {
        if layer.r.is_some() && layer.members > layer.in_dim {
            return Err(Error::InfeasibleOrthogonality {
                k: layer.members,
                dim: layer.in_dim,
            });
        }
        if layer.s.is_some() && layer.members > layer.out_dim {
            return Err(Error::InfeasibleOrthogonality {
                k: layer.members,
                dim: layer.out_dim,
            });
        }
    }
    for id in [layer.r, layer.s].into_iter().flatten() {
        fill_stack(params, id, scheme, rng)?;
    }
    reset_bias(params, layer);
    Ok(())
}

/// Like [`init_adapters`], but a stack too narrow for orthonormal rows
/// (`K` above its width, e.g. the `K×1` output scaling of a scalar head)
/// falls back to random signs. Returns the number of fallbacks.
pub fn init_adapters_where_feasible(
    params: &mut ParamSet,
    layer: &EnsembleLinear,
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<usize> {
    let mut fallbacks = 0;
    for (id, width) in [(layer.r, layer.in_dim), (layer.s, layer.out_dim)] {
        let Some(id) = id else { continue };
        let chosen = if scheme == InitScheme::Orthogonal && layer.members > width {
            fallbacks += 1;
            InitScheme::RandomSign
        } else {
            scheme
        };
        fill_stack(params, id, chosen, rng)?;
    }
    reset_bias(params, layer);
    Ok(fallbacks)
}

/// `λ·‖A Aᵀ − I‖²_F` for a `K×p` adapter stack.
pub fn orthogonality_penalty(tape: &Tape, a: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::Parameter(format!("penalty strength must be ≥ 0, got {lambda}")));
    }
    let (k, _) = tape.dims(a);
    let at = tape.transpose(a)?;
    let gram = tape.matmul(a, at)?;
    let eye = tape.constant(Tensor::eye(k));
    let diff = tape.sub(gram, eye)?;
    let fro = tape.sum(tape.square(diff));
    Ok(tape.scale(fro, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub active: bool,
}

impl DropoutSpec {
    pub fn new(rate: f64, active: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self { rate, active })
    }
}

/// Inverted dropout: kept activations are divided by `1 − rate`. A fresh
/// mask is drawn on every call while `spec.active`.
pub fn dropout(tape: &Tape, x: Var, spec: DropoutSpec, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {}",
            spec.rate
        )));
    }
    if !spec.active || spec.rate == 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x);
    let n: usize = shape.iter().product::<usize>().max(1);
    let keep: Vec<bool> = (0..n).map(|_| !rng.bernoulli(spec.rate)).collect();
    dropout_with_mask(tape, x, &keep, spec.rate)
}

/// Applies an explicit keep-mask with inverted scaling.
pub fn dropout_with_mask(tape: &Tape, x: Var, keep: &[bool], rate: f64) -> Result<Var> {
    let shape = tape.shape(x);
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
    if mask.len() != shape.iter().product::<usize>().max(1) {
        return Err(Error::shape("dropout", &shape, &[keep.len()]));
    }
    let m = tape.constant(Tensor::from_parts(shape, mask));
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, relative_error};

    fn layer_with(
        w: &[f64],
        p: usize,
        q: usize,
        r: &[f64],
        s: &[f64],
        b: &[f64],
        k: usize,
    ) -> (ParamSet, EnsembleLinear) {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", p, q, k, AdapterMask::ALL, &Rng::new(0)).unwrap();
        ps.get_mut(l.weight).data_mut().copy_from_slice(w);
        ps.get_mut(l.r.unwrap()).data_mut().copy_from_slice(r);
        ps.get_mut(l.s.unwrap()).data_mut().copy_from_slice(s);
        ps.get_mut(l.b.unwrap()).data_mut().copy_from_slice(b);
        (ps, l)
    }

    #[test]
    fn identity_member() {
        let (ps, l) = layer_with(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], 1);
        let tape = Tape::new();
        let g = ps.bind_frozen(&tape);
        let z = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        let y = l.forward(&g, z).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_scalar_members() {
        // member k: ((x·r_k)·W)·s_k + b_k
        let (ps, l) = layer_with(&[2.0], 1, 1, &[1.0, -1.0], &[1.0, 2.0], &[0.0, 1.0], 2);
        let tape = Tape::new();
        let g = ps.bind_frozen(&tape);
        let x = Tensor::matrix(1, 1, vec![3.0]).unwrap().repeat_rows(2).unwrap();
        let y = l.forward(&g, tape.constant(x)).unwrap();
        let oracle: Vec<f64> = (0..2)
            .map(|k| (3.0 * [1.0, -1.0][k] * 2.0) * [1.0, 2.0][k] + [0.0, 1.0][k])
            .collect();
        assert_eq!(tape.value(y).data(), oracle.as_slice());
        assert_eq!(oracle, vec![6.0, -11.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", 3, 4, 5, AdapterMask::ALL, &Rng::new(1)).unwrap();
        init_adapters(&mut ps, &l, InitScheme::RandomSign, &mut Rng::new(2)).unwrap();
        let tape = Tape::new();
        let g = ps.bind_frozen(&tape);
        let y = l.forward(&g, tape.constant(Tensor::zeros(&[10, 3]))).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_errors() {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", 3, 2, 4, AdapterMask::ALL, &Rng::new(1)).unwrap();
        let tape = Tape::new();
        let g = ps.bind_frozen(&tape);
        let bad_cols = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(l.forward(&g, bad_cols), Err(Error::Shape { .. })));
        let bad_rows = tape.constant(Tensor::zeros(&[6, 3]));
        assert!(matches!(l.forward(&g, bad_rows), Err(Error::Contract(_))));
    }

    #[test]
    fn random_sign_entries_are_unit() {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", 7, 5, 4, AdapterMask::ALL, &Rng::new(1)).unwrap();
        init_adapters(&mut ps, &l, InitScheme::RandomSign, &mut Rng::new(9)).unwrap();
        for id in [l.r.unwrap(), l.s.unwrap()] {
            assert!(ps.get(id).data().iter().all(|v| v.abs() == 1.0));
        }
        assert!(ps.get(l.b.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", 3, 4, 2, AdapterMask::ALL, &Rng::new(1)).unwrap();
        init_adapters(&mut ps, &l, InitScheme::Orthogonal, &mut Rng::new(3)).unwrap();
        let r = ps.get(l.r.unwrap());
        let gram = r.matmul(&r.transpose().unwrap()).unwrap();
        assert!(gram.max_abs_diff(&Tensor::eye(2)) < 1e-10);

        let one = orthonormal_rows(1, 6, &mut Rng::new(4)).unwrap();
        let norm: f64 = one.data().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_infeasible_when_members_exceed_width() {
        let mut ps = ParamSet::new();
        let l = EnsembleLinear::new(&mut ps, "l", 32, 1, 10, AdapterMask::ALL, &Rng::new(1)).unwrap();
        let err = init_adapters(&mut ps, &l, InitScheme::Orthogonal, &mut Rng::new(3)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleOrthogonality { k: 10, dim: 1 }));
        let fallbacks =
            init_adapters_where_feasible(&mut ps, &l, InitScheme::Orthogonal, &mut Rng::new(3)).unwrap();
        assert_eq!(fallbacks, 1);
        assert!(ps.get(l.s.unwrap()).data().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn penalty_examples() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap());
        assert_eq!(tape.scalar(orthogonality_penalty(&tape, a, 1.0).unwrap()), 2.0);
        assert_eq!(tape.scalar(orthogonality_penalty(&tape, a, 0.0).unwrap()), 0.0);
        let o = tape.constant(orthonormal_rows(3, 5, &mut Rng::new(5)).unwrap());
        assert!(tape.scalar(orthogonality_penalty(&tape, o, 1.0).unwrap()) < 1e-20);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let a0 = Tensor::matrix(3, 4, (0..12).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let tape = Tape::new();
        let a = tape.param(&a0);
        let p = orthogonality_penalty(&tape, a, 0.7).unwrap();
        tape.backward(p).unwrap();
        let analytic = tape.grad(a).unwrap();
        let numeric = finite_diff_grad(
            |t| {
                let tp = Tape::new();
                let v = tp.constant(t.clone());
                Ok(tp.scalar(orthogonality_penalty(&tp, v, 0.7)?))
            },
            &a0,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(analytic.data(), numeric.data()) < 1e-6);
    }

    #[test]
    fn dropout_cases() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, -2.0, 3.0]]).unwrap());
        let mut rng = Rng::new(0);
        let same = dropout(&tape, x, DropoutSpec::new(0.0, true).unwrap(), &mut rng).unwrap();
        assert_eq!(tape.value(same), tape.value(x));
        let kept = dropout_with_mask(&tape, x, &[true, true, true], 0.5).unwrap();
        assert_eq!(tape.value(kept).data(), &[2.0, -4.0, 6.0]);
        let zero = tape.constant(Tensor::zeros(&[2, 3]));
        let z = dropout(&tape, zero, DropoutSpec::new(0.5, true).unwrap(), &mut rng).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
        assert!(DropoutSpec::new(1.0, true).is_err());
        let bad = DropoutSpec { rate: 1.5, active: true };
        assert!(matches!(dropout(&tape, x, bad, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[200, 50]));
        let y = dropout(&tape, x, DropoutSpec::new(0.3, true).unwrap(), &mut Rng::new(8)).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn subsets_enumerate_eight_masks() {
        let all = AdapterMask::all_subsets();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], AdapterMask::NONE);
        assert_eq!(all[7], AdapterMask::ALL);
        assert_eq!("RB".parse::<AdapterMask>().unwrap().to_string(), "RB");
    }
}
