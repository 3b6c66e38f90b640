//! Fields-of-Experts energy with Gaussian-mixture potentials.
//!
//! The energy of an image `x` is `E(x) = sum_i sum_j phi_j((K_j x)_i)` where
//! each `K_j` is a circular convolution with a filter built as a linear
//! combination of a fixed orthonormal basis (the 5x5 DCT by default) and
//! each `phi_j` is a negative-log Gaussian mixture. Everything the training
//! and sampling code needs is analytic: the spatial gradient, Hessian-vector
//! products, and adjoints with respect to all parameters.

use std::fmt::Write as _;
use std::path::Path;

use crate::conv::{conv2d_circular, corr2d_circular, dct_basis};
use crate::error::{invalid, Error, Result};
use crate::image::{Image, Kernel};
use crate::potential::{GmmPotential, WEIGHT_FLOOR};
use crate::threads::map_indexed;

/// Identifier of the filter basis, used for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// The 25 orthonormal 5x5 DCT-II kernels, constant kernel first.
    Dct5,
    /// An arbitrary caller-supplied basis; not serializable.
    Custom,
}

/// Filter coefficients over a fixed kernel basis.
#[derive(Debug, Clone)]
pub struct FilterBank {
    /// `n_filters x basis_len`, row-major.
    betas: Vec<f64>,
    n_filters: usize,
    basis: Vec<Kernel>,
    kind: BasisKind,
    /// When set, coefficient column 0 (the constant kernel) is held at zero
    /// so that every filter annihilates constants.
    dc_free: bool,
}

impl FilterBank {
    /// Bank over the 5x5 DCT basis.
    pub fn new(n_filters: usize, betas: Vec<f64>, dc_free: bool) -> Result<Self> {
        Self::with_basis(n_filters, betas, dct_basis(), BasisKind::Dct5, dc_free)
    }

    pub fn with_basis(
        n_filters: usize,
        betas: Vec<f64>,
        basis: Vec<Kernel>,
        kind: BasisKind,
        dc_free: bool,
    ) -> Result<Self> {
        if n_filters == 0 {
            return Err(invalid("filter bank needs at least one filter"));
        }
        if basis.is_empty() {
            return Err(invalid("filter basis must be nonempty"));
        }
        let size = basis[0].size();
        if basis.iter().any(|k| k.size() != size) {
            return Err(invalid("basis kernels must share one size"));
        }
        if betas.len() != n_filters * basis.len() {
            return Err(invalid(format!(
                "betas length {} does not match {} x {}",
                betas.len(),
                n_filters,
                basis.len()
            )));
        }
        if !betas.iter().all(|b| b.is_finite()) {
            return Err(invalid("betas must be finite"));
        }
        let bank = Self {
            betas,
            n_filters,
            basis,
            kind,
            dc_free,
        };
        if dc_free {
            for j in 0..n_filters {
                if bank.beta(j, 0) != 0.0 {
                    return Err(invalid("dc_free bank requires zero constant coefficients"));
                }
            }
        }
        Ok(bank)
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn basis_len(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Kernel] {
        &self.basis
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dc_free(&self) -> bool {
        self.dc_free
    }

    pub fn kernel_size(&self) -> usize {
        self.basis[0].size()
    }

    #[inline]
    pub fn beta(&self, filter: usize, basis_idx: usize) -> f64 {
        self.betas[filter * self.basis.len() + basis_idx]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Replaces all coefficients; the constant column is zeroed again when
    /// the bank is DC-free.
    pub fn set_betas(&mut self, betas: &[f64]) -> Result<()> {
        if betas.len() != self.betas.len() {
            return Err(invalid("betas length cannot change"));
        }
        if !betas.iter().all(|b| b.is_finite()) {
            return Err(invalid("betas must be finite"));
        }
        self.betas.copy_from_slice(betas);
        if self.dc_free {
            let b = self.basis.len();
            for j in 0..self.n_filters {
                self.betas[j * b] = 0.0;
            }
        }
        Ok(())
    }

    /// Materializes the filters `k_i = sum_j beta_{i,j} b_j`.
    pub fn build_filters(&self) -> Vec<Kernel> {
        let size = self.kernel_size();
        (0..self.n_filters)
            .map(|j| {
                let mut taps = vec![0.0; size * size];
                for (l, basis) in self.basis.iter().enumerate() {
                    let c = self.beta(j, l);
                    if c != 0.0 {
                        for (t, b) in taps.iter_mut().zip(basis.taps()) {
                            *t += c * b;
                        }
                    }
                }
                Kernel::new(size, taps).expect("valid filter kernel")
            })
            .collect()
    }
}

/// Parameter gradients produced by [`FoeModel::param_grad`], flat row-major.
#[derive(Debug, Clone)]
pub struct FoeParamGrads {
    /// `n_filters x basis_len`.
    pub betas: Vec<f64>,
    /// `n_filters x n_components`.
    pub weights: Vec<f64>,
}

impl FoeParamGrads {
    pub fn zeros(model: &FoeModel) -> Self {
        Self {
            betas: vec![0.0; model.bank().betas().len()],
            weights: vec![0.0; model.n_filters() * model.n_components()],
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &FoeParamGrads) {
        for (a, b) in self.betas.iter_mut().zip(&other.betas) {
            *a += alpha * b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.betas.iter_mut() {
            *a *= alpha;
        }
        for a in self.weights.iter_mut() {
            *a *= alpha;
        }
    }
}

pub const MODEL_SCHEMA_VERSION: u64 = 1;

/// The Fields-of-Experts model: a filter bank plus one mixture potential per
/// filter. Immutable during evaluation and sampling; training owns a single
/// mutable copy.
#[derive(Debug, Clone)]
pub struct FoeModel {
    bank: FilterBank,
    potentials: Vec<GmmPotential>,
    /// Prior weight learned by bilevel training, if any.
    pub lambda: Option<f64>,
    /// Mean anchor for the constant mode, if any.
    pub anchor_mean: Option<f64>,
}

impl FoeModel {
    pub fn new(bank: FilterBank, potentials: Vec<GmmPotential>) -> Result<Self> {
        if potentials.len() != bank.n_filters() {
            return Err(invalid("one potential per filter required"));
        }
        let sigma2 = potentials[0].sigma2();
        let n_comp = potentials[0].n_components();
        for p in &potentials {
            if p.sigma2() != sigma2 || p.n_components() != n_comp || p.nu() != potentials[0].nu() {
                return Err(invalid(
                    "potentials must share grid half-width, variance and component count",
                ));
            }
        }
        Ok(Self {
            bank,
            potentials,
            lambda: None,
            anchor_mean: None,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut FilterBank {
        &mut self.bank
    }

    pub fn potentials(&self) -> &[GmmPotential] {
        &self.potentials
    }

    pub fn potentials_mut(&mut self) -> &mut [GmmPotential] {
        &mut self.potentials
    }

    pub fn n_filters(&self) -> usize {
        self.bank.n_filters()
    }

    pub fn n_components(&self) -> usize {
        self.potentials[0].n_components()
    }

    pub fn nu(&self) -> f64 {
        self.potentials[0].nu()
    }

    pub fn sigma2(&self) -> f64 {
        self.potentials[0].sigma2()
    }

    fn check_shape(&self, x: &Image) -> Result<()> {
        let s = self.bank.kernel_size();
        if x.height() < s || x.width() < s {
            return Err(invalid(format!(
                "image {}x{} is smaller than the {}x{} filters",
                x.height(),
                x.width(),
                s,
                s
            )));
        }
        Ok(())
    }

    /// Flat weight vector over all potentials, `n_filters x n_components`.
    pub fn weights_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_filters() * self.n_components());
        for p in &self.potentials {
            out.extend_from_slice(p.weights());
        }
        out
    }

    /// Writes back a flat weight vector, clamping to the positivity floor.
    pub fn set_weights_flat(&mut self, weights: &[f64]) -> Result<()> {
        let n = self.n_components();
        if weights.len() != self.n_filters() * n {
            return Err(invalid("flat weight length mismatch"));
        }
        for (j, p) in self.potentials.iter_mut().enumerate() {
            p.set_weights(&weights[j * n..(j + 1) * n])?;
        }
        Ok(())
    }

    /// `E(x) = sum_i sum_j phi_j((K_j x)_i)`.
    pub fn energy(&self, x: &Image) -> Result<f64> {
        self.check_shape(x)?;
        let filters = self.bank.build_filters();
        let partials = map_indexed(self.n_filters(), |j| {
            let r = conv2d_circular(x, &filters[j]).expect("shape checked");
            let p = &self.potentials[j];
            r.data()
                .iter()
                .map(|&t| p.eval_unchecked(t).0)
                .sum::<f64>()
        });
        Ok(partials.into_iter().sum())
    }

    /// Exact gradient of the energy with respect to the image,
    /// `sum_j K_j^T phi_j'(K_j x)`.
    pub fn energy_grad(&self, x: &Image) -> Result<Image> {
        self.check_shape(x)?;
        let filters = self.bank.build_filters();
        let contributions = map_indexed(self.n_filters(), |j| {
            let mut r = conv2d_circular(x, &filters[j]).expect("shape checked");
            let p = &self.potentials[j];
            for t in r.data_mut() {
                *t = p.eval_unchecked(*t).1;
            }
            corr2d_circular(&r, &filters[j]).expect("shape checked")
        });
        let mut grad = Image::zeros(x.height(), x.width());
        for c in &contributions {
            grad.axpy(1.0, c);
        }
        Ok(grad)
    }

    /// Energy value and gradient in one pass (shared convolutions).
    pub fn energy_value_grad(&self, x: &Image) -> Result<(f64, Image)> {
        self.check_shape(x)?;
        let filters = self.bank.build_filters();
        let contributions = map_indexed(self.n_filters(), |j| {
            let mut r = conv2d_circular(x, &filters[j]).expect("shape checked");
            let p = &self.potentials[j];
            let mut value = 0.0;
            for t in r.data_mut() {
                let (phi, dphi, _) = p.eval_unchecked(*t);
                value += phi;
                *t = dphi;
            }
            (value, corr2d_circular(&r, &filters[j]).expect("shape checked"))
        });
        let mut grad = Image::zeros(x.height(), x.width());
        let mut value = 0.0;
        for (v, c) in &contributions {
            value += v;
            grad.axpy(1.0, c);
        }
        Ok((value, grad))
    }

    /// Hessian-vector product `sum_j K_j^T (phi_j''(K_j x) .* K_j v)`.
    pub fn energy_hvp(&self, x: &Image, v: &Image) -> Result<Image> {
        self.check_shape(x)?;
        if !x.same_shape(v) {
            return Err(invalid("hessian-vector product requires matching shapes"));
        }
        let filters = self.bank.build_filters();
        let contributions = map_indexed(self.n_filters(), |j| {
            let r = conv2d_circular(x, &filters[j]).expect("shape checked");
            let mut kv = conv2d_circular(v, &filters[j]).expect("shape checked");
            let p = &self.potentials[j];
            for (t, kvi) in r.data().iter().zip(kv.data_mut()) {
                *kvi *= p.eval_unchecked(*t).2;
            }
            corr2d_circular(&kv, &filters[j]).expect("shape checked")
        });
        let mut out = Image::zeros(x.height(), x.width());
        for c in &contributions {
            out.axpy(1.0, c);
        }
        Ok(out)
    }

    /// Gradient of `upstream_scalar * E(x) + <upstream_image, grad_x E(x)>`
    /// with respect to all parameters (betas and mixture weights).
    pub fn param_grad(
        &self,
        x: &Image,
        upstream_scalar: f64,
        upstream_image: Option<&Image>,
    ) -> Result<FoeParamGrads> {
        self.check_shape(x)?;
        if let Some(u) = upstream_image {
            if !u.same_shape(x) {
                return Err(invalid("upstream image shape mismatch"));
            }
        }
        let mut grads = FoeParamGrads::zeros(self);
        if upstream_scalar == 0.0 && upstream_image.is_none() {
            return Ok(grads);
        }
        let b = self.bank.basis_len();
        // Basis responses are shared across filters.
        let bx: Vec<Image> = map_indexed(b, |l| {
            conv2d_circular(x, &self.bank.basis()[l]).expect("shape checked")
        });
        let bu: Option<Vec<Image>> = upstream_image.map(|u| {
            map_indexed(b, |l| {
                conv2d_circular(u, &self.bank.basis()[l]).expect("shape checked")
            })
        });
        let n_pix = x.len();
        let n_comp = self.n_components();
        let per_filter = map_indexed(self.n_filters(), |j| {
            let p = &self.potentials[j];
            // Filter response from the basis responses.
            let mut r = vec![0.0; n_pix];
            for l in 0..b {
                let c = self.bank.beta(j, l);
                if c != 0.0 {
                    for (ri, bi) in r.iter_mut().zip(bx[l].data()) {
                        *ri += c * bi;
                    }
                }
            }
            // K_j applied to the upstream image, when present.
            let ku: Option<Vec<f64>> = bu.as_ref().map(|bu| {
                let mut ku = vec![0.0; n_pix];
                for l in 0..b {
                    let c = self.bank.beta(j, l);
                    if c != 0.0 {
                        for (ki, bi) in ku.iter_mut().zip(bu[l].data()) {
                            *ki += c * bi;
                        }
                    }
                }
                ku
            });
            let mut w_grad = vec![0.0; n_comp];
            // a_i multiplies basis responses of x, b_i those of u.
            let mut a = vec![0.0; n_pix];
            let mut bcoef = vec![0.0; n_pix];
            for i in 0..n_pix {
                let t = r[i];
                let (_, dphi, ddphi) = p.eval_unchecked(t);
                let kui = ku.as_ref().map_or(0.0, |k| k[i]);
                a[i] = upstream_scalar * dphi + kui * ddphi;
                bcoef[i] = dphi;
                if upstream_scalar != 0.0 || kui != 0.0 {
                    p.accumulate_weight_grads(t, upstream_scalar, kui, &mut w_grad);
                }
            }
            let mut beta_grad = vec![0.0; b];
            for l in 0..b {
                let mut acc = 0.0;
                for (ai, bi) in a.iter().zip(bx[l].data()) {
                    acc += ai * bi;
                }
                if let Some(bu) = &bu {
                    for (ci, ui) in bcoef.iter().zip(bu[l].data()) {
                        acc += ci * ui;
                    }
                }
                beta_grad[l] = acc;
            }
            (beta_grad, w_grad)
        });
        for (j, (beta_grad, w_grad)) in per_filter.into_iter().enumerate() {
            grads.betas[j * b..(j + 1) * b].copy_from_slice(&beta_grad);
            grads.weights[j * n_comp..(j + 1) * n_comp].copy_from_slice(&w_grad);
        }
        Ok(grads)
    }

    /// One-step denoiser `y - sigma^2 grad E(y)`.
    pub fn one_step_denoise(&self, y: &Image, sigma: f64) -> Result<Image> {
        if sigma < 0.0 {
            return Err(invalid("noise level must be nonnegative"));
        }
        let mut out = y.clone();
        if sigma > 0.0 {
            let g = self.energy_grad(y)?;
            out.axpy(-(sigma * sigma), &g);
        }
        Ok(out)
    }

    /// Eigenvalues (ascending) of the Gaussian-mixture precision matrix
    /// `(1/sigma^2) sum_j K_j^T K_j` on the `h x w` torus, computed from the
    /// squared magnitudes of the filter frequency symbols.
    pub fn precision_spectrum(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        let s = self.bank.kernel_size();
        if h < s || w < s {
            return Err(invalid("grid smaller than the filters"));
        }
        let filters = self.bank.build_filters();
        let c = (s / 2) as isize;
        let inv_s2 = 1.0 / self.sigma2();
        let mut eigs = Vec::with_capacity(h * w);
        for fr in 0..h {
            for fc in 0..w {
                let mut total = 0.0;
                for k in &filters {
                    let (mut re, mut im) = (0.0, 0.0);
                    for qr in -c..=c {
                        for qc in -c..=c {
                            let tap = k.taps()[((qr + c) * s as isize + (qc + c)) as usize];
                            let phase = -2.0
                                * std::f64::consts::PI
                                * (fr as f64 * qr as f64 / h as f64
                                    + fc as f64 * qc as f64 / w as f64);
                            re += tap * phase.cos();
                            im += tap * phase.sin();
                        }
                    }
                    total += re * re + im * im;
                }
                eigs.push(inv_s2 * total);
            }
        }
        eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        Ok(eigs)
    }

    /// Serializes the model to its versioned JSON format. Numbers carry 17
    /// significant digits, enough to reproduce every f64 bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        if self.bank.kind() != BasisKind::Dct5 {
            return Err(invalid("only dct5-basis models are serializable"));
        }
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"schema_version\": {},", MODEL_SCHEMA_VERSION);
        let _ = writeln!(s, "  \"nu\": {},", fmt_g17(self.nu()));
        let _ = writeln!(s, "  \"sigma2\": {},", fmt_g17(self.sigma2()));
        let _ = writeln!(s, "  \"n_components\": {},", self.n_components());
        let _ = writeln!(s, "  \"n_filters\": {},", self.n_filters());
        s.push_str("  \"basis\": \"dct5\",\n");
        let _ = writeln!(s, "  \"dc_free\": {},", self.bank.dc_free());
        if let Some(l) = self.lambda {
            let _ = writeln!(s, "  \"lambda\": {},", fmt_g17(l));
        }
        if let Some(a) = self.anchor_mean {
            let _ = writeln!(s, "  \"anchor_mean\": {},", fmt_g17(a));
        }
        write_array(&mut s, "betas", self.bank.betas());
        s.push_str(",\n");
        write_array(&mut s, "weights", &self.weights_flat());
        s.push_str("\n}\n");
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("model json: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("model json: expected object".into()))?;
        let schema = field_u64(obj, "schema_version")?;
        if schema != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema_version {schema}"
            )));
        }
        let basis = obj
            .get("basis")
            .and_then(|b| b.as_str())
            .ok_or_else(|| Error::Format("model json: missing basis".into()))?;
        if basis != "dct5" {
            return Err(Error::Format(format!("unsupported basis {basis:?}")));
        }
        let nu = field_f64(obj, "nu")?;
        let sigma2 = field_f64(obj, "sigma2")?;
        let n_components = field_u64(obj, "n_components")? as usize;
        let n_filters = field_u64(obj, "n_filters")? as usize;
        let dc_free = obj
            .get("dc_free")
            .and_then(|b| b.as_bool())
            .ok_or_else(|| Error::Format("model json: missing dc_free".into()))?;
        let betas = field_array(obj, "betas", n_filters * 25)?;
        let weights = field_array(obj, "weights", n_filters * n_components)?;
        let bank = FilterBank::new(n_filters, betas, dc_free)?;
        let mut potentials = Vec::with_capacity(n_filters);
        for j in 0..n_filters {
            let w = weights[j * n_components..(j + 1) * n_components]
                .iter()
                .map(|w| w.max(WEIGHT_FLOOR))
                .collect();
            potentials.push(GmmPotential::new(w, nu, sigma2)?);
        }
        let mut model = FoeModel::new(bank, potentials)?;
        model.lambda = obj.get("lambda").and_then(|v| v.as_f64());
        model.anchor_mean = obj.get("anchor_mean").and_then(|v| v.as_f64());
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }
}

fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_array(s: &mut String, name: &str, values: &[f64]) {
    let _ = write!(s, "  \"{name}\": [");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        if i % 8 == 0 {
            s.push_str("\n    ");
        }
        s.push_str(&fmt_g17(*v));
    }
    s.push_str("\n  ]");
}

fn field_f64(obj: &serde_json::Map<String, serde_json::Value>, name: &str) -> Result<f64> {
    obj.get(name)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Format(format!("model json: missing number {name:?}")))
}

fn field_u64(obj: &serde_json::Map<String, serde_json::Value>, name: &str) -> Result<u64> {
    obj.get(name)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format(format!("model json: missing integer {name:?}")))
}

fn field_array(
    obj: &serde_json::Map<String, serde_json::Value>,
    name: &str,
    expect_len: usize,
) -> Result<Vec<f64>> {
    let arr = obj
        .get(name)
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Format(format!("model json: missing array {name:?}")))?;
    if arr.len() != expect_len {
        return Err(Error::Format(format!(
            "model json: array {name:?} has {} entries, expected {expect_len}",
            arr.len()
        )));
    }
    arr.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::Format(format!("model json: non-numeric entry in {name:?}")))
        })
        .collect()
}
