//! Structured evaluation for sparse priors whose support is too large for a
//! dense Gram matrix.
//!
//! The observation is kept as a dense ambient tensor Y (p^d entries). For a
//! support point S (a set of k "elements", an element being an index and,
//! for signed priors, a sign) the projection splits over element subsets,
//! u_S = Σ_{E ⊆ S, |E| ≤ d} φ(E), so exp(θ u_S) is a product of factors
//! T(E) = exp(θ φ(E)). Sums over all k-subsets are then a depth-first walk
//! over increasing elements that carries, for every candidate next element,
//! the product of the factors it would add. The last two levels are summed
//! as a dense pair kernel.

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use super::LambdaOutcome;
use crate::error::{Error, Result};
use crate::prior::{next_combination, DiscretePrior, SignalVector};

const RESCALE_GAP: f64 = 200.0;

#[derive(Clone, Debug)]
pub struct ImplicitSupport {
    prior: DiscretePrior,
    p: usize,
    k: usize,
    d: usize,
    signed: bool,
    n: usize,
    mmax: usize,
    /// patterns[m]: surjections [d] → [m] with the parity mask of each.
    patterns: Vec<Vec<(Vec<usize>, u32)>>,
    /// mask_counts[m]: number of surjections per parity mask.
    mask_counts: Vec<Vec<(u32, f64)>>,
    scale: f64,
    log_rows: f64,
    binom_k: Vec<f64>,
}

fn surjections(d: usize, m: usize) -> Vec<(Vec<usize>, u32)> {
    let mut out = Vec::new();
    let mut t = vec![0usize; d];
    loop {
        let mut counts = vec![0usize; m];
        for &x in &t {
            counts[x] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            let mask = counts.iter().enumerate().fold(0u32, |acc, (j, c)| acc | (((c % 2) as u32) << j));
            out.push((t.clone(), mask));
        }
        let mut level = d;
        loop {
            if level == 0 {
                return out;
            }
            level -= 1;
            t[level] += 1;
            if t[level] < m {
                break;
            }
            t[level] = 0;
        }
    }
}

fn sign_product(mask: u32, bits: u32) -> f64 {
    if (mask & bits).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl ImplicitSupport {
    pub fn new(prior: DiscretePrior, ambient_cap: usize, table_cap: usize) -> Result<Self> {
        let (p, k) = (prior.dim(), prior.sparsity());
        let d = prior.order() as usize;
        if matches!(prior.kind(), crate::prior::PriorKind::Orthogonal { .. }) {
            return Err(Error::InvalidParameter("implicit backend handles sparse priors only".into()));
        }
        let ambient = prior.ambient_dim();
        if ambient > ambient_cap as f64 {
            return Err(Error::CardinalityExceeded { cardinality: ambient, cap: ambient_cap });
        }
        let signed = prior.is_signed();
        let n = if signed { 2 * p } else { p };
        let mmax = d.min(k);
        let table = (n as f64).powi(mmax as i32);
        if table > table_cap as f64 {
            return Err(Error::CardinalityExceeded { cardinality: table, cap: table_cap });
        }
        let mut patterns = vec![Vec::new()];
        let mut mask_counts = vec![Vec::new()];
        for m in 1..=mmax {
            let pats = surjections(d, m);
            let mut counts: Vec<(u32, f64)> = Vec::new();
            for (_, mask) in &pats {
                match counts.iter_mut().find(|(mk, _)| mk == mask) {
                    Some(slot) => slot.1 += 1.0,
                    None => counts.push((*mask, 1.0)),
                }
            }
            patterns.push(pats);
            mask_counts.push(counts);
        }
        let binom_k = (0..=mmax)
            .map(|m| crate::numeric::ln_binomial(k as u64, m as u64).exp().round())
            .collect();
        Ok(Self {
            prior,
            p,
            k,
            d,
            signed,
            n,
            mmax,
            patterns,
            mask_counts,
            scale: (k as f64).powf(-(d as f64) / 2.0),
            log_rows: prior.log_support_size(),
            binom_k,
        })
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    fn next_start(&self, e: usize) -> usize {
        if self.signed {
            (e / 2 + 1) * 2
        } else {
            e + 1
        }
    }

    fn flat(&self, elems: &[usize]) -> usize {
        elems.iter().fold(0, |f, &e| f * self.n + e)
    }

    fn elements_of(&self, x: &SignalVector) -> Vec<usize> {
        x.indices()
            .iter()
            .zip(x.signs())
            .map(|(&i, &s)| if self.signed { 2 * i + usize::from(s < 0) } else { i })
            .collect()
    }

    /// Draws (X, Z) in the same order as every other backend of this prior:
    /// the signal first, then p^d noise entries.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> (SignalVector, Vec<f64>) {
        let x = self.prior.sample_signal(rng);
        let len = self.p.pow(self.d as u32);
        let z = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        (x, z)
    }

    /// φ(E) for every element set with |E| ≤ min(d, k), from a dense tensor.
    pub fn potentials(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let (n, p) = (self.n, self.p);
        let mut phi = vec![Vec::new()];
        for m in 1..=self.mmax {
            let mut table = vec![0.0; n.pow(m as u32)];
            let mut idx: Vec<usize> = (0..m).collect();
            let mut v = vec![0.0; 1 << m];
            loop {
                v.iter_mut().for_each(|x| *x = 0.0);
                for (pat, mask) in &self.patterns[m] {
                    let amb = pat.iter().fold(0, |f, &j| f * p + idx[j]);
                    v[*mask as usize] += y[amb];
                }
                if self.signed {
                    for bits in 0u32..(1 << m) {
                        let mut f = 0;
                        for (j, &i) in idx.iter().enumerate() {
                            f = f * n + 2 * i + ((bits >> j) & 1) as usize;
                        }
                        let mut acc = 0.0;
                        for (mask, val) in v.iter().enumerate() {
                            acc += sign_product(mask as u32, bits) * val;
                        }
                        table[f] = self.scale * acc;
                    }
                } else {
                    table[self.flat(&idx)] = self.scale * v.iter().sum::<f64>();
                }
                if !next_combination(&mut idx, p) {
                    break;
                }
            }
            phi.push(table);
        }
        phi
    }

    /// Potentials of the noiseless signal tensor, nonzero only on element sets
    /// whose indices lie in the support of x.
    fn signal_terms(&self, x: &SignalVector) -> Vec<(usize, usize, f64)> {
        let k = self.k;
        let kd = (k as f64).powi(self.d as i32);
        let mut out = Vec::new();
        for m in 1..=self.mmax {
            let mut pos: Vec<usize> = (0..m).collect();
            loop {
                let nbits = if self.signed { 1u32 << m } else { 1 };
                for bits in 0..nbits {
                    let mut f = 0;
                    let mut truth_bits = 0u32;
                    for (j, &q) in pos.iter().enumerate() {
                        let i = x.indices()[q];
                        let b = if self.signed { ((bits >> j) & 1) as usize } else { 0 };
                        f = f * self.n + if self.signed { 2 * i + b } else { i };
                        if x.signs()[q] < 0 {
                            truth_bits |= 1 << j;
                        }
                    }
                    let val: f64 = self.mask_counts[m]
                        .iter()
                        .map(|&(mask, c)| c * sign_product(mask, bits ^ truth_bits))
                        .sum();
                    out.push((m, f, val / kd));
                }
                if !next_combination(&mut pos, k) {
                    break;
                }
            }
        }
        out
    }

    fn subsets(&self, elems: &[usize], max_size: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for bits in 0u32..(1 << elems.len()) {
            let size = bits.count_ones() as usize;
            if size > max_size {
                continue;
            }
            let mut f = 0;
            for (j, &e) in elems.iter().enumerate() {
                if bits >> j & 1 == 1 {
                    f = f * self.n + e;
                }
            }
            out.push((size, f));
        }
        out
    }

    /// Evaluates one trial at several SNRs with common (X, Z).
    pub fn trial<R: Rng + ?Sized>(&self, lambdas: &[f64], rng: &mut R, posterior: bool) -> Result<Vec<LambdaOutcome>> {
        let (x, z) = self.sample_noise(rng);
        self.evaluate(&x, &z, lambdas, posterior)
    }

    /// Evaluates Y = √λ x^⊗d + z for each λ. `z` is the dense noise tensor.
    pub fn evaluate(&self, x: &SignalVector, z: &[f64], lambdas: &[f64], posterior: bool) -> Result<Vec<LambdaOutcome>> {
        let phi = self.potentials(z);
        let signal = self.signal_terms(x);
        let truth = self.elements_of(x);
        let mut noise_true = 0.0;
        for (size, f) in self.subsets(&truth, self.mmax) {
            if size > 0 {
                noise_true += phi[size][f];
            }
        }
        let mut tables: Vec<Vec<f64>> = phi.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
            }
            let theta = lambda.sqrt();
            if lambda == 0.0 {
                let (overlap_true, norm_sq) = if posterior { self.uniform_statistics(x) } else { (f64::NAN, f64::NAN) };
                out.push(LambdaOutcome { lambda, log_z: 0.0, u_true: noise_true, noise_true, overlap_true, norm_sq });
                continue;
            }
            let mut shift_total = 0.0;
            for m in 1..=self.mmax {
                for (t, v) in tables[m].iter_mut().zip(&phi[m]) {
                    *t = theta * v;
                }
            }
            for &(m, f, v) in &signal {
                tables[m][f] += lambda * v;
            }
            for m in 1..=self.mmax {
                let shift = tables[m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                tables[m].iter_mut().for_each(|t| *t = (*t - shift).exp());
                shift_total += self.binom_k[m] * shift;
            }
            let mut acc = Accumulator::new(self, posterior);
            acc.run(&tables);
            if !(acc.z > 0.0) || !acc.z.is_finite() {
                return Err(Error::NumericalFailure(format!("partition sum degenerate at lambda {lambda}")));
            }
            let log_z = acc.reference + acc.z.ln() + shift_total - self.log_rows - 0.5 * lambda;
            let (overlap_true, norm_sq) = if posterior { self.statistics(&acc, x) } else { (f64::NAN, f64::NAN) };
            out.push(LambdaOutcome {
                lambda,
                log_z,
                u_true: theta + noise_true,
                noise_true,
                overlap_true,
                norm_sq,
            });
        }
        Ok(out)
    }

    // λ = 0: the posterior is the prior, so walk with unit factors.
    fn uniform_statistics(&self, x: &SignalVector) -> (f64, f64) {
        let ones: Vec<Vec<f64>> = (0..=self.mmax).map(|m| vec![1.0; self.n.pow(m as u32)]).collect();
        let mut acc = Accumulator::new(self, true);
        acc.run(&ones);
        self.statistics(&acc, x)
    }

    fn statistics(&self, acc: &Accumulator, x: &SignalVector) -> (f64, f64) {
        let marg = acc.marg.as_ref().expect("marginals requested");
        let inv_z = 1.0 / acc.z;
        let kd = (self.k as f64).powi(self.d as i32);
        let nbits = if self.signed { 1u32 << self.mmax } else { 1 };
        let mut norm_sq = 0.0;
        let mut overlap = 0.0;
        let mut coeffs = vec![0.0; nbits as usize];
        for m in 1..=self.mmax {
            let nb = if self.signed { 1u32 << m } else { 1 };
            let mut idx: Vec<usize> = (0..m).collect();
            loop {
                for bits in 0..nb {
                    let mut f = 0;
                    for (j, &i) in idx.iter().enumerate() {
                        f = f * self.n + if self.signed { 2 * i + ((bits >> j) & 1) as usize } else { i };
                    }
                    coeffs[bits as usize] = marg[m][f] * inv_z;
                }
                let truth_bits = truth_pattern(x, &idx);
                for &(mask, c) in &self.mask_counts[m] {
                    let entry: f64 = (0..nb).map(|b| sign_product(mask, b) * coeffs[b as usize]).sum();
                    norm_sq += c * entry * entry;
                    if let Some(tb) = truth_bits {
                        overlap += c * sign_product(mask, tb) * entry;
                    }
                }
                if !next_combination(&mut idx, self.p) {
                    break;
                }
            }
        }
        (overlap / kd, norm_sq / kd)
    }

    /// max_S |⟨Z, x_S^⊗d⟩|² over the support, by a max-plus walk.
    pub fn max_projection_sq(&self, z: &[f64]) -> f64 {
        let mut phi = self.potentials(z);
        let hi = MaxWalk { sup: self, phi: &phi }.run();
        for t in phi.iter_mut() {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        let lo = MaxWalk { sup: self, phi: &phi }.run();
        hi.max(lo).powi(2)
    }
}

// Sign bitmask of x on the given indices, or None if some index is off-support.
fn truth_pattern(x: &SignalVector, idx: &[usize]) -> Option<u32> {
    let mut bits = 0u32;
    for (j, i) in idx.iter().enumerate() {
        let q = x.indices().binary_search(i).ok()?;
        if x.signs()[q] < 0 {
            bits |= 1 << j;
        }
    }
    Some(bits)
}

struct Accumulator<'a> {
    sup: &'a ImplicitSupport,
    z: f64,
    reference: f64,
    marg: Option<Vec<Vec<f64>>>,
    rowsum: Vec<f64>,
    colsum: Vec<f64>,
    scratch: Vec<f64>,
    vbuf: Vec<f64>,
}

impl<'a> Accumulator<'a> {
    fn new(sup: &'a ImplicitSupport, posterior: bool) -> Self {
        let n = sup.n;
        let marg = posterior.then(|| (0..=sup.mmax).map(|m| if m == 0 { Vec::new() } else { vec![0.0; n.pow(m as u32)] }).collect());
        Self {
            sup,
            z: 0.0,
            reference: f64::NEG_INFINITY,
            marg,
            rowsum: vec![0.0; n],
            colsum: vec![0.0; n],
            scratch: vec![0.0; n],
            vbuf: vec![0.0; n],
        }
    }

    fn factor(&mut self, scale: f64) -> f64 {
        if self.reference == f64::NEG_INFINITY {
            self.reference = scale;
        } else if scale > self.reference + RESCALE_GAP {
            let r = (self.reference - scale).exp();
            self.z *= r;
            if let Some(marg) = self.marg.as_mut() {
                for t in marg.iter_mut() {
                    t.iter_mut().for_each(|v| *v *= r);
                }
            }
            self.reference = scale;
        }
        (scale - self.reference).exp()
    }

    fn run(&mut self, tables: &[Vec<f64>]) {
        let mut inter = tables[1].clone();
        let mx = inter.iter().copied().fold(0.0, f64::max);
        if mx == 0.0 {
            return;
        }
        inter.iter_mut().for_each(|v| *v /= mx);
        let mut path = Vec::with_capacity(self.sup.k);
        self.visit(tables, &mut path, 0.0, &inter, mx.ln(), 0);
    }

    // Fills out[lo..] with Π T(E'' ∪ {e, e'}) over E'' ⊆ path, |E''| ≤ d − 2.
    fn delta(sup: &ImplicitSupport, tables: &[Vec<f64>], prefixes: &[(usize, usize)], e: usize, lo: usize, out: &mut [f64]) {
        let n = sup.n;
        out[lo..].iter_mut().for_each(|v| *v = 1.0);
        for &(size, f) in prefixes {
            let base = (f * n + e) * n;
            let row = &tables[size + 2][base + lo..base + n];
            for (o, t) in out[lo..].iter_mut().zip(row) {
                *o *= t;
            }
        }
    }

    fn visit(&mut self, tables: &[Vec<f64>], path: &mut Vec<usize>, logw: f64, inter: &[f64], s: f64, start: usize) {
        let sup = self.sup;
        let (n, k) = (sup.n, sup.k);
        let depth = path.len();
        if k == 1 {
            let c = self.factor(logw + s);
            let mut total = 0.0;
            for e in start..n {
                total += c * inter[e];
            }
            self.z += total;
            if let Some(marg) = self.marg.as_mut() {
                for e in start..n {
                    marg[1][e] += c * inter[e];
                }
            }
            return;
        }
        let prefixes = if sup.d >= 2 { sup.subsets(path, sup.d - 2) } else { Vec::new() };
        if depth + 2 == k {
            self.pair_kernel(tables, path, &prefixes, logw, inter, s, start);
            return;
        }
        let mut child = vec![0.0; n];
        for e in start..n {
            if inter[e] == 0.0 {
                continue;
            }
            let lo = sup.next_start(e);
            if lo >= n {
                break;
            }
            Self::delta(sup, tables, &prefixes, e, lo, &mut child);
            let mut mx = 0.0f64;
            for j in lo..n {
                child[j] *= inter[j];
                mx = mx.max(child[j]);
            }
            if mx == 0.0 {
                continue;
            }
            let inv = 1.0 / mx;
            child[lo..].iter_mut().for_each(|v| *v *= inv);
            path.push(e);
            self.visit(tables, path, logw + s + inter[e].ln(), &child, s + mx.ln(), lo);
            path.pop();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_kernel(&mut self, tables: &[Vec<f64>], path: &[usize], prefixes: &[(usize, usize)], logw: f64, inter: &[f64], s: f64, start: usize) {
        let sup = self.sup;
        let n = sup.n;
        let c = self.factor(logw + 2.0 * s);
        let with_marg = self.marg.is_some();
        let subsets = if with_marg { sup.subsets(path, sup.mmax) } else { Vec::new() };
        let pair_targets: Vec<(usize, usize)> =
            subsets.iter().filter(|(sz, _)| sz + 2 <= sup.mmax).map(|&(sz, f)| (sz + 2, f)).collect();
        if with_marg {
            self.rowsum[start..].iter_mut().for_each(|v| *v = 0.0);
            self.colsum[start..].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut vbuf = std::mem::take(&mut self.vbuf);
        let single_row = prefixes.len() == 1 && prefixes[0].0 == 0;
        let mut total = 0.0;
        for e in start..n {
            if inter[e] == 0.0 {
                continue;
            }
            let lo = sup.next_start(e);
            if lo >= n {
                break;
            }
            let weights: &[f64] = if single_row {
                &tables[2][e * n + lo..e * n + n]
            } else {
                Self::delta(sup, tables, prefixes, e, lo, &mut scratch);
                &scratch[lo..]
            };
            let ce = c * inter[e];
            let a = &inter[lo..n];
            let row = match self.marg.as_mut() {
                None => ce * dot(a, weights),
                Some(marg) => {
                    let cs = &mut self.colsum[lo..n];
                    let row = match pair_targets.as_slice() {
                        [] => fused(ce, a, weights, cs, None),
                        [(m, f)] => {
                            let base = (f * n + e) * n;
                            fused(ce, a, weights, cs, Some(&mut marg[*m][base + lo..base + n]))
                        }
                        _ => {
                            let row = fused(ce, a, weights, cs, None);
                            for ((v, x), w) in vbuf[lo..n].iter_mut().zip(a).zip(weights) {
                                *v = ce * x * w;
                            }
                            for &(m, f) in &pair_targets {
                                let base = (f * n + e) * n;
                                for (w, v) in marg[m][base + lo..base + n].iter_mut().zip(&vbuf[lo..n]) {
                                    *w += v;
                                }
                            }
                            row
                        }
                    };
                    self.rowsum[e] = row;
                    row
                }
            };
            total += row;
        }
        self.vbuf = vbuf;
        self.scratch = scratch;
        self.z += total;
        if let Some(marg) = self.marg.as_mut() {
            for &(sz, f) in &subsets {
                if sz >= 1 {
                    marg[sz][f] += total;
                }
                if sz < sup.mmax {
                    let base = f * n;
                    for x in start..n {
                        marg[sz + 1][base + x] += self.rowsum[x] + self.colsum[x];
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// Σ_j ce·a_j·b_j, adding each term into `cs` and, if given, into `w`.
fn fused(ce: f64, a: &[f64], b: &[f64], cs: &mut [f64], w: Option<&mut [f64]>) -> f64 {
    let mut acc = [0.0; 4];
    let len = a.len();
    let body = len - len % 4;
    match w {
        Some(w) => {
            for i in (0..body).step_by(4) {
                for l in 0..4 {
                    let v = ce * a[i + l] * b[i + l];
                    acc[l] += v;
                    cs[i + l] += v;
                    w[i + l] += v;
                }
            }
            for i in body..len {
                let v = ce * a[i] * b[i];
                acc[0] += v;
                cs[i] += v;
                w[i] += v;
            }
        }
        None => {
            for i in (0..body).step_by(4) {
                for l in 0..4 {
                    let v = ce * a[i + l] * b[i + l];
                    acc[l] += v;
                    cs[i + l] += v;
                }
            }
            for i in body..len {
                let v = ce * a[i] * b[i];
                acc[0] += v;
                cs[i] += v;
            }
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

struct MaxWalk<'a> {
    sup: &'a ImplicitSupport,
    phi: &'a [Vec<f64>],
}

impl MaxWalk<'_> {
    fn run(&self) -> f64 {
        let inter = self.phi[1].clone();
        let mut path = Vec::new();
        self.visit(&mut path, 0.0, &inter, 0)
    }

    fn delta(&self, prefixes: &[(usize, usize)], e: usize, lo: usize, out: &mut [f64]) {
        let n = self.sup.n;
        out[lo..].iter_mut().for_each(|v| *v = 0.0);
        for &(size, f) in prefixes {
            let base = (f * n + e) * n;
            for (o, t) in out[lo..].iter_mut().zip(&self.phi[size + 2][base + lo..base + n]) {
                *o += t;
            }
        }
    }

    fn visit(&self, path: &mut Vec<usize>, value: f64, inter: &[f64], start: usize) -> f64 {
        let sup = self.sup;
        let (n, k) = (sup.n, sup.k);
        if k == 1 {
            return inter[start..].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + value;
        }
        let prefixes = if sup.d >= 2 { sup.subsets(path, sup.d - 2) } else { Vec::new() };
        let mut buf = vec![0.0; n];
        let mut best = f64::NEG_INFINITY;
        for e in start..n {
            let lo = sup.next_start(e);
            if lo >= n {
                break;
            }
            self.delta(&prefixes, e, lo, &mut buf);
            if path.len() + 2 == k {
                let head = value + inter[e];
                for j in lo..n {
                    best = best.max(head + inter[j] + buf[j]);
                }
            } else {
                for j in lo..n {
                    buf[j] += inter[j];
                }
                path.push(e);
                best = best.max(self.visit(path, value + inter[e], &buf, lo));
                path.pop();
            }
        }
        best
    }
}
