//! Sparse/banded linear algebra kernels.
//!
//! The finite element systems here are small enough (≈10⁴ unknowns) that a
//! banded direct factorization after reverse Cuthill–McKee reordering beats
//! the setup cost of anything fancier, and it is bit-for-bit deterministic —
//! a hard requirement for reproducible runs. Real symmetric matrices are fed
//! through the complex band solver; the 2× arithmetic overhead is irrelevant
//! at these sizes and keeps one factorization code path.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative residual accepted from a direct solve after one step of
/// iterative refinement. Failing this usually means the system is
/// near-singular (e.g. an interior eigenvalue collision), which callers must
/// hear about rather than silently absorb.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Deterministic hashing helpers
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer: a cheap, high-quality integer hash.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic value in `[-0.5, 0.5)` derived from `(seed, index)`.
/// Used for reproducible jitter and starting vectors without touching any
/// stateful RNG.
pub fn hashed_unit(seed: u64, index: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(index));
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

// ---------------------------------------------------------------------------
// Real CSR matrices
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix over `f64`.
#[derive(Debug, Clone)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed and
    /// columns sorted within each row.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, _, _) in triplets {
            debug_assert!(i < n_rows);
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut cursor = counts.clone();
        for &(i, j, v) in triplets {
            debug_assert!(j < n_cols);
            let p = cursor[i];
            cols[p] = j;
            vals[p] = v;
            cursor[i] += 1;
        }
        // Sort each row by column and merge duplicates.
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        for i in 0..n_rows {
            let (lo, hi) = (counts[i], counts[i + 1]);
            let mut entries: Vec<(usize, f64)> =
                (lo..hi).map(|p| (cols[p], vals[p])).collect();
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                if let Some(last) = out_cols.last() {
                    if *last == j && out_cols.len() > row_ptr[i] {
                        *out_vals.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_cols.push(j);
                out_vals.push(v);
            }
            row_ptr[i + 1] = out_cols.len();
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx: out_cols,
            values: out_vals,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Entry accessor (binary search within the row); zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    /// Iterate over the entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
        y
    }

    /// Real matrix times complex vector.
    pub fn matvec_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![Complex64::ZERO; self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = Complex64::ZERO;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.col_idx[p]] * self.values[p];
            }
            y[i] = acc;
        }
        y
    }

    /// `xᵀ A y` for real vectors.
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        x.iter().zip(ay.iter()).map(|(a, b)| a * b).sum()
    }

    /// Bilinear form `xᵀ A y` for complex vectors (no conjugation).
    pub fn bilinear_complex(&self, x: &[Complex64], y: &[Complex64]) -> Complex64 {
        let ay = self.matvec_complex(y);
        x.iter().zip(ay.iter()).map(|(a, b)| a * b).sum()
    }

    /// Maximum `|i - j|` over stored entries under a relabeling
    /// `new = inv_perm[old]`.
    pub fn bandwidth_under(&self, inv_perm: &[usize]) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n_rows {
            let pi = inv_perm[i];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let pj = inv_perm[self.col_idx[p]];
                bw = bw.max(pi.abs_diff(pj));
            }
        }
        bw
    }
}

// ---------------------------------------------------------------------------
// Reverse Cuthill–McKee ordering
// ---------------------------------------------------------------------------

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
/// Returns `perm` with `perm[new] = old`. Handles disconnected patterns by
/// ordering each component in turn.
pub fn rcm_ordering(pattern: &Csr) -> Vec<usize> {
    let n = pattern.n_rows();
    // Symmetrized adjacency (defensive: FEM patterns are already symmetric).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in pattern.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let bfs_levels = |start: usize, visited_global: &[bool]| -> Vec<Vec<usize>> {
        let mut levels = vec![vec![start]];
        let mut seen = vec![false; n];
        seen[start] = true;
        loop {
            let mut next = Vec::new();
            for &u in levels.last().unwrap() {
                for &v in &adj[u] {
                    if !seen[v] && !visited_global[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    // Pick the unvisited node of minimum degree as a starting guess for each
    // connected component.
    while let Some(mut start) = (0..n)
        .filter(|&i| !visited[i])
        .min_by_key(|&i| (degree[i], i))
    {
        // Pseudo-peripheral refinement: walk to a farthest min-degree node
        // until the eccentricity stops growing.
        let mut ecc = 0usize;
        for _ in 0..8 {
            let levels = bfs_levels(start, &visited);
            if levels.len() - 1 <= ecc && ecc > 0 {
                break;
            }
            ecc = levels.len() - 1;
            let last = levels.last().unwrap();
            start = *last.iter().min_by_key(|&&i| (degree[i], i)).unwrap();
        }
        // Cuthill–McKee from `start`, neighbors in increasing degree.
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        let base = order.len();
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
        order[base..].reverse();
    }
    order
}

/// Inverse of a permutation given as `perm[new] = old`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

// ---------------------------------------------------------------------------
// Complex banded LU with partial pivoting
// ---------------------------------------------------------------------------

/// Complex band matrix in LAPACK-style band storage with `kl` extra rows of
/// headroom for pivoting fill. Entry `(i, j)` lives at offset
/// `kl + ku + i - j` of column `j`, valid for `-(ku) ≤ i - j ≤ kl` before
/// factorization (fill can raise the effective upper bandwidth to `kl + ku`).
#[derive(Debug, Clone)]
pub struct BandMatC {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<Complex64>,
}

impl BandMatC {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> BandMatC {
        let ldab = 2 * kl + ku + 1;
        BandMatC {
            n,
            kl,
            ku,
            ldab,
            data: vec![Complex64::ZERO; ldab * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        let off = self.kl + self.ku + i - j; // i - j ≥ -ku keeps this in range
        debug_assert!(off >= self.kl && off < self.ldab);
        j * self.ldab + off
    }

    /// Accumulate into entry `(i, j)`; the entry must lie within the band.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(
            (j.saturating_sub(i)) <= self.ku && (i.saturating_sub(j)) <= self.kl,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let p = self.idx(i, j);
        self.data[p] += v;
    }

    /// LU factorization with partial pivoting (banded). Returns the factor
    /// or a singularity report carrying the pivot-ratio condition estimate.
    pub fn factor(mut self, context: &str) -> Result<BandLuC> {
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.kl + self.ku; // fill-extended upper bandwidth
        let ldab = self.ldab;
        let mut ipiv = vec![0usize; n];
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;

        // Entry (i, j) lives at data[j*ldab + kl + ku0 + i - j].
        let ku0 = self.ku;
        let at = |i: usize, j: usize| -> usize { j * ldab + kl + ku0 + i - j };

        for j in 0..n {
            // Pivot search in column j, rows j..=min(n-1, j+kl).
            let i_end = (j + kl).min(n - 1);
            let mut piv_row = j;
            let mut piv_mag = self.data[at(j, j)].norm();
            for i in (j + 1)..=i_end {
                let m = self.data[at(i, j)].norm();
                if m > piv_mag {
                    piv_mag = m;
                    piv_row = i;
                }
            }
            ipiv[j] = piv_row;
            if piv_mag == 0.0 || !piv_mag.is_finite() {
                return Err(Error::Singular {
                    context: context.to_string(),
                    cond_estimate: f64::INFINITY,
                });
            }
            max_pivot = max_pivot.max(piv_mag);
            min_pivot = min_pivot.min(piv_mag);
            // Swap the U-part of rows j and piv_row across the active columns.
            if piv_row != j {
                let c_end = (j + ku_eff).min(n - 1);
                for c in j..=c_end {
                    // Both offsets stay in storage: i - c ≥ j - (j + ku_eff)
                    // = -ku_eff and piv_row - c ≤ kl.
                    let pa = c * ldab + kl + ku0 + j - c;
                    let pb = c * ldab + kl + ku0 + piv_row - c;
                    self.data.swap(pa, pb);
                }
            }
            // Multipliers and rank-1 update of the trailing band block.
            let pivot = self.data[at(j, j)];
            for i in (j + 1)..=i_end {
                let m = self.data[at(i, j)] / pivot;
                self.data[at(i, j)] = m;
            }
            let c_end = (j + ku_eff).min(n - 1);
            for c in (j + 1)..=c_end {
                let ujc = self.data[at(j, c)];
                if ujc == Complex64::ZERO {
                    continue;
                }
                for i in (j + 1)..=i_end {
                    let m = self.data[at(i, j)];
                    if m != Complex64::ZERO {
                        self.data[at(i, c)] -= m * ujc;
                    }
                }
            }
        }
        Ok(BandLuC {
            n,
            kl,
            ku: ku0,
            ldab,
            data: self.data,
            ipiv,
            cond_estimate: max_pivot / min_pivot,
        })
    }
}

/// Factored complex band matrix (L, U and pivot sequence).
#[derive(Debug, Clone)]
pub struct BandLuC {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<Complex64>,
    ipiv: Vec<usize>,
    /// Ratio of largest to smallest pivot magnitude: a cheap conditioning
    /// indicator (not a true condition number, but it reliably flags
    /// near-singular systems such as interior eigenvalue collisions).
    pub cond_estimate: f64,
}

impl BandLuC {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ku0, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let ku_eff = kl + ku0;
        let at = |i: usize, j: usize| -> Complex64 { self.data[j * ldab + kl + ku0 + i - j] };
        // L pass with interleaved row swaps.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(p, j);
            }
            let bj = b[j];
            if bj != Complex64::ZERO {
                let i_end = (j + kl).min(n - 1);
                for i in (j + 1)..=i_end {
                    let l = at(i, j);
                    if l != Complex64::ZERO {
                        b[i] -= l * bj;
                    }
                }
            }
        }
        // U back-substitution.
        for j in (0..n).rev() {
            let c_end = (j + ku_eff).min(n - 1);
            let mut acc = b[j];
            for c in (j + 1)..=c_end {
                acc -= at(j, c) * b[c];
            }
            b[j] = acc / at(j, j);
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn norm2_c(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Direct solve with one step of iterative refinement and a residual check.
///
/// `apply` must compute the action of the ORIGINAL (unfactored) matrix; the
/// relative residual after refinement must meet [`SOLVE_RESIDUAL_TOL`] or the
/// solve is reported as failed rather than returning a silently bad vector.
pub fn solve_refined(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    lu: &BandLuC,
    rhs: &[Complex64],
    context: &str,
) -> Result<Vec<Complex64>> {
    let rhs_norm = norm2_c(rhs);
    if rhs_norm == 0.0 {
        return Ok(vec![Complex64::ZERO; rhs.len()]);
    }
    let mut x = lu.solve(rhs);
    // One refinement step.
    let ax = apply(&x);
    let r: Vec<Complex64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
    let dx = lu.solve(&r);
    for (xi, di) in x.iter_mut().zip(dx.iter()) {
        *xi += di;
    }
    let ax2 = apply(&x);
    let r2: Vec<Complex64> = rhs.iter().zip(ax2.iter()).map(|(b, a)| b - a).collect();
    let rel = norm2_c(&r2) / rhs_norm;
    if rel > SOLVE_RESIDUAL_TOL {
        return Err(Error::ResidualCheck {
            context: context.to_string(),
            residual: rel,
            tol: SOLVE_RESIDUAL_TOL,
        });
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Assembly of permuted band systems from real CSR combinations
// ---------------------------------------------------------------------------

/// Assemble `Σ cₛ Aₛ` (complex coefficients, real CSR terms) as a band matrix
/// under the relabeling `new = inv_perm[old]`, restricted to the rows/columns
/// listed in `keep` (given in OLD indices; `keep_inv[old] = Some(reduced)`).
///
/// This single entry point covers every system we factor: full matrices
/// (`keep` = identity) and Dirichlet-reduced blocks alike.
pub struct BandAssembly<'a> {
    pub terms: &'a [(Complex64, &'a Csr)],
}

impl<'a> BandAssembly<'a> {
    /// Band-assemble over a subset of indices with a bandwidth-reducing
    /// permutation computed on the subset pattern. Returns the factor-ready
    /// matrix plus the subset permutation (`perm[new] = reduced index`).
    pub fn build(&self, keep: &[usize], context: &str) -> Result<(BandMatC, Vec<usize>)> {
        let n_red = keep.len();
        if n_red == 0 {
            return Err(Error::Config(format!(
                "{context}: cannot assemble an empty system"
            )));
        }
        let n_full = self.terms[0].1.n_rows();
        let mut keep_inv: Vec<Option<usize>> = vec![None; n_full];
        for (r, &old) in keep.iter().enumerate() {
            keep_inv[old] = Some(r);
        }
        // Reduced sparsity pattern (unit values) for ordering.
        let mut pattern_triplets = Vec::new();
        for (r, &old_i) in keep.iter().enumerate() {
            for (_, csr) in self.terms.iter().map(|(c, m)| (c, *m)) {
                for (old_j, _) in csr.row(old_i) {
                    if let Some(c) = keep_inv[old_j] {
                        pattern_triplets.push((r, c, 1.0));
                    }
                }
            }
        }
        let pattern = Csr::from_triplets(n_red, n_red, &pattern_triplets);
        let perm = rcm_ordering(&pattern);
        let inv_perm = invert_permutation(&perm);
        let bw = pattern.bandwidth_under(&inv_perm);
        let mut band = BandMatC::zeros(n_red, bw, bw);
        for (r, &old_i) in keep.iter().enumerate() {
            let pi = inv_perm[r];
            for (coeff, csr) in self.terms {
                if *coeff == Complex64::ZERO {
                    continue;
                }
                for (old_j, v) in csr.row(old_i) {
                    if let Some(c) = keep_inv[old_j] {
                        band.add(pi, inv_perm[c], coeff * v);
                    }
                }
            }
        }
        Ok((band, perm))
    }
}

/// A factored reduced system that remembers its subset and permutation, so
/// callers can solve in original (full-vector) coordinates.
pub struct ReducedFactor {
    lu: BandLuC,
    /// Reduced index -> old (full) index.
    pub keep: Vec<usize>,
    /// Band row -> reduced index.
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl ReducedFactor {
    /// Factor `Σ cₛ Aₛ` restricted to `keep`.
    pub fn new(
        terms: &[(Complex64, &Csr)],
        keep: &[usize],
        context: &str,
    ) -> Result<ReducedFactor> {
        let (band, perm) = BandAssembly { terms }.build(keep, context)?;
        let inv_perm = invert_permutation(&perm);
        let lu = band.factor(context)?;
        Ok(ReducedFactor {
            lu,
            keep: keep.to_vec(),
            perm,
            inv_perm,
        })
    }

    pub fn cond_estimate(&self) -> f64 {
        self.lu.cond_estimate
    }

    /// Solve for a reduced right-hand side (indexed like `keep`).
    pub fn solve_reduced(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(rhs.len(), self.keep.len());
        let mut b: Vec<Complex64> = (0..rhs.len()).map(|r| rhs[self.perm[r]]).collect();
        self.lu.solve_in_place(&mut b);
        let mut x = vec![Complex64::ZERO; rhs.len()];
        for r in 0..rhs.len() {
            x[r] = b[self.inv_perm[r]];
        }
        x
    }

    /// Solve with refinement against the true operator `apply_reduced`.
    pub fn solve_reduced_refined(
        &self,
        apply_reduced: impl Fn(&[Complex64]) -> Vec<Complex64>,
        rhs: &[Complex64],
        context: &str,
    ) -> Result<Vec<Complex64>> {
        let rhs_norm = norm2_c(rhs);
        if rhs_norm == 0.0 {
            return Ok(vec![Complex64::ZERO; rhs.len()]);
        }
        let mut x = self.solve_reduced(rhs);
        let ax = apply_reduced(&x);
        let r: Vec<Complex64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
        let dx = self.solve_reduced(&r);
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi += di;
        }
        let ax2 = apply_reduced(&x);
        let rel = rhs
            .iter()
            .zip(ax2.iter())
            .map(|(b, a)| (b - a).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / rhs_norm;
        if rel > SOLVE_RESIDUAL_TOL {
            return Err(Error::ResidualCheck {
                context: context.to_string(),
                residual: rel,
                tol: SOLVE_RESIDUAL_TOL,
            });
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// Eigenvalue iterations (real symmetric generalized problems)
// ---------------------------------------------------------------------------

/// Result of an eigen iteration.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).collect()
}

fn deterministic_start(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| hashed_unit(seed, i as u64)).collect()
}

const EIGEN_TOL: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 400;

/// Smallest eigenvalue of `A x = λ M x` (A, M symmetric, A positive
/// definite on the index set) by inverse power iteration with Rayleigh
/// quotient monitoring.
pub fn smallest_generalized_eigenvalue(
    a: &Csr,
    m: &Csr,
    keep: &[usize],
    context: &str,
) -> Result<EigenResult> {
    generalized_inverse_iteration(a, m, keep, 0.0, false, EIGEN_TOL, EIGEN_MAX_ITER, context)
}

/// Smallest NONZERO eigenvalue of `A x = λ M x` where `A` has the constant
/// vector in its kernel (pure Neumann stiffness).
///
/// Stage one iterates on `(A + M)⁻¹ M` with the constant mode deflated:
/// `A + M` is positive definite for every eigenvalue scale, so the pass is
/// always well posed, just possibly slow — it only runs to a rough tolerance.
/// Stage two re-factors with a shift a few percent below the rough Rayleigh
/// estimate, which makes inverse iteration converge to the target eigenvalue
/// (the one nearest the shift) almost immediately.
pub fn smallest_nonzero_generalized_eigenvalue(
    a: &Csr,
    m: &Csr,
    keep: &[usize],
    context: &str,
) -> Result<EigenResult> {
    let rough = generalized_inverse_iteration(a, m, keep, 1.0, true, 1e-5, 300, context)?;
    if !(rough.value.is_finite() && rough.value > 0.0) {
        return Err(Error::EigenNoConvergence {
            context: context.to_string(),
            iterations: rough.iterations,
            last_change: rough.value,
        });
    }
    // Term coefficient convention: the factored operator is A + σM, so a
    // conventional shift just below λ needs σ = -0.95 λ̂.
    let mut sigma = -0.95 * rough.value;
    for _ in 0..4 {
        match generalized_inverse_iteration(
            a,
            m,
            keep,
            sigma,
            true,
            EIGEN_TOL,
            EIGEN_MAX_ITER,
            context,
        ) {
            // The estimate landed numerically on an eigenvalue; back off.
            Err(Error::Singular { .. }) => sigma *= 0.9,
            other => {
                let mut res = other?;
                res.iterations += rough.iterations;
                return Ok(res);
            }
        }
    }
    Err(Error::EigenNoConvergence {
        context: context.to_string(),
        iterations: rough.iterations,
        last_change: f64::NAN,
    })
}

/// Eigenvalue of `A x = λ M x` nearest to `shift`, by shift-inverted power
/// iteration. Fails with `Error::Singular` when the shift is numerically an
/// eigenvalue itself — callers probing for resonance treat that as "too
/// close".
pub fn nearest_generalized_eigenvalue(
    a: &Csr,
    m: &Csr,
    keep: &[usize],
    shift: f64,
    context: &str,
) -> Result<EigenResult> {
    generalized_inverse_iteration(a, m, keep, -shift, false, EIGEN_TOL, EIGEN_MAX_ITER, context)
}

/// Inverse / shift-inverted power iteration on the operator `(A + σM)⁻¹ M`
/// restricted to the `keep` index set. Note the sign convention: the factored
/// operator is `A + sigma_term · M`, so a conventional spectral shift `s`
/// corresponds to `sigma_term = -s`.
#[allow(clippy::too_many_arguments)]
fn generalized_inverse_iteration(
    a: &Csr,
    m: &Csr,
    keep: &[usize],
    sigma: f64,
    deflate_constant: bool,
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<EigenResult> {
    let n = keep.len();
    let shifted = [
        (Complex64::new(1.0, 0.0), a),
        (Complex64::new(sigma, 0.0), m),
    ];
    let terms: Vec<(Complex64, &Csr)> = shifted.to_vec();
    let factor = ReducedFactor::new(&terms, keep, context)?;

    // Reduced matvec helpers on the subset.
    let n_full = a.n_rows();
    let mut keep_inv = vec![usize::MAX; n_full];
    for (r, &old) in keep.iter().enumerate() {
        keep_inv[old] = r;
    }
    let reduced_matvec = |csr: &Csr, x: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for (r, &old_i) in keep.iter().enumerate() {
            let mut acc = 0.0;
            for (old_j, v) in csr.row(old_i) {
                let c = keep_inv[old_j];
                if c != usize::MAX {
                    acc += v * x[c];
                }
            }
            y[r] = acc;
        }
        y
    };

    let ones = vec![1.0; n];
    let m_ones = reduced_matvec(m, &ones);
    let ones_m_ones: f64 = m_ones.iter().sum();

    let mut x = deterministic_start(n, 0x5eed_0001);
    let mut rho_prev = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        if deflate_constant {
            let c: f64 = x.iter().zip(m_ones.iter()).map(|(a, b)| a * b).sum::<f64>()
                / ones_m_ones;
            for xi in x.iter_mut() {
                *xi -= c;
            }
        }
        let mx = reduced_matvec(m, &x);
        let y = to_real(&factor.solve_reduced(&to_complex(&mx)));
        // Normalize in the M-inner product.
        let my = reduced_matvec(m, &y);
        let ynorm = y
            .iter()
            .zip(my.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .sqrt();
        if !(ynorm.is_finite() && ynorm > 0.0) {
            return Err(Error::EigenNoConvergence {
                context: context.to_string(),
                iterations,
                last_change: f64::NAN,
            });
        }
        x = y.iter().map(|v| v / ynorm).collect();
        let ax = reduced_matvec(a, &x);
        let mx2 = reduced_matvec(m, &x);
        let num: f64 = x.iter().zip(ax.iter()).map(|(a, b)| a * b).sum();
        let den: f64 = x.iter().zip(mx2.iter()).map(|(a, b)| a * b).sum();
        let rho = num / den;
        if (rho - rho_prev).abs() <= tol * rho.abs().max(1e-300) && it >= 3 {
            return Ok(EigenResult {
                value: rho,
                vector: x,
                iterations,
            });
        }
        rho_prev = rho;
    }
    Err(Error::EigenNoConvergence {
        context: context.to_string(),
        iterations,
        last_change: (rho_prev).abs(),
    })
}

/// Largest eigenvalue of `B x = μ C x` (B symmetric positive semidefinite,
/// C symmetric positive definite) by power iteration on `C⁻¹B`.
pub fn largest_generalized_eigenvalue(
    b: &Csr,
    c: &Csr,
    keep: &[usize],
    context: &str,
) -> Result<EigenResult> {
    let n = keep.len();
    let terms: Vec<(Complex64, &Csr)> = vec![(Complex64::new(1.0, 0.0), c)];
    let factor = ReducedFactor::new(&terms, keep, context)?;
    let n_full = b.n_rows();
    let mut keep_inv = vec![usize::MAX; n_full];
    for (r, &old) in keep.iter().enumerate() {
        keep_inv[old] = r;
    }
    let reduced_matvec = |csr: &Csr, x: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for (r, &old_i) in keep.iter().enumerate() {
            let mut acc = 0.0;
            for (old_j, v) in csr.row(old_i) {
                let col = keep_inv[old_j];
                if col != usize::MAX {
                    acc += v * x[col];
                }
            }
            y[r] = acc;
        }
        y
    };

    let mut x = deterministic_start(n, 0x5eed_0002);
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for xi in x.iter_mut() {
        *xi /= nx;
    }
    let mut rho_prev = -f64::INFINITY;
    let mut stable = 0;
    const MAX_POWER_ITER: usize = 5000;
    for it in 0..MAX_POWER_ITER {
        let bx = reduced_matvec(b, &x);
        let y = to_real(&factor.solve_reduced(&to_complex(&bx)));
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(ny.is_finite()) || ny == 0.0 {
            // B annihilated the iterate (it lay in the kernel); restart from
            // a different deterministic vector.
            x = deterministic_start(n, 0x5eed_0003 + it as u64);
            continue;
        }
        x = y.iter().map(|v| v / ny).collect();
        let bx2 = reduced_matvec(b, &x);
        let cx = reduced_matvec(c, &x);
        let num: f64 = x.iter().zip(bx2.iter()).map(|(a, b)| a * b).sum();
        let den: f64 = x.iter().zip(cx.iter()).map(|(a, b)| a * b).sum();
        let rho = num / den;
        if (rho - rho_prev).abs() <= 1e-11 * rho.abs().max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return Ok(EigenResult {
                    value: rho,
                    vector: x,
                    iterations: it + 1,
                });
            }
        } else {
            stable = 0;
        }
        rho_prev = rho;
    }
    Err(Error::EigenNoConvergence {
        context: context.to_string(),
        iterations: MAX_POWER_ITER,
        last_change: rho_prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_keep(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn csr_from_triplets_sums_duplicates() {
        let m = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0), (0, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_relative_eq!(m.get(0, 0), 3.0);
        assert_relative_eq!(m.get(0, 1), -1.0);
        assert_relative_eq!(m.get(1, 0), 4.0);
        assert_relative_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let triplets = vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, -3.0), (2, 0, 0.5), (2, 2, 4.0)];
        let m = Csr::from_triplets(3, 3, &triplets);
        let x = vec![1.0, 2.0, 3.0];
        let y = m.matvec(&x);
        assert_relative_eq!(y[0], 5.0);
        assert_relative_eq!(y[1], -6.0);
        assert_relative_eq!(y[2], 12.5);
    }

    #[test]
    fn rcm_orders_path_graph_to_bandwidth_one() {
        // A path graph presented in scrambled order.
        let n = 20;
        let scramble: Vec<usize> = (0..n).map(|i| (i * 7) % n).collect();
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((scramble[i], scramble[i], 2.0));
            if i + 1 < n {
                trips.push((scramble[i], scramble[i + 1], -1.0));
                trips.push((scramble[i + 1], scramble[i], -1.0));
            }
        }
        let m = Csr::from_triplets(n, n, &trips);
        let perm = rcm_ordering(&m);
        let inv = invert_permutation(&perm);
        assert_eq!(m.bandwidth_under(&inv), 1);
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        // Random-ish complex band system, checked against nalgebra dense LU.
        let n = 40;
        let kl = 3;
        let ku = 2;
        let mut band = BandMatC::zeros(n, kl, ku);
        let mut dense = nalgebra::DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let re = hashed_unit(7, (i * n + j) as u64);
                let im = hashed_unit(13, (i * n + j) as u64);
                let mut v = Complex64::new(re, im);
                if i == j {
                    v += Complex64::new(3.0, 0.5); // keep comfortably nonsingular
                }
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let rhs: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(hashed_unit(21, i as u64), hashed_unit(22, i as u64)))
            .collect();
        let lu = band.factor("test").unwrap();
        let x = lu.solve(&rhs);
        let xd = dense
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_vec(rhs.clone()))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).norm() < 1e-11, "mismatch at {i}");
        }
        assert!(lu.cond_estimate >= 1.0);
    }

    #[test]
    fn band_lu_pivots_on_zero_diagonal() {
        // [[0, 1], [1, 0]] requires a pivot swap.
        let mut band = BandMatC::zeros(2, 1, 1);
        band.add(0, 1, Complex64::new(1.0, 0.0));
        band.add(1, 0, Complex64::new(1.0, 0.0));
        let lu = band.factor("test").unwrap();
        let x = lu.solve(&[Complex64::new(2.0, 0.0), Complex64::new(5.0, 0.0)]);
        assert_relative_eq!(x[0].re, 5.0, epsilon = 1e-14);
        assert_relative_eq!(x[1].re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let band = BandMatC::zeros(3, 1, 1);
        match band.factor("test") {
            Err(Error::Singular { .. }) => {}
            other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn reduced_factor_solves_subset() {
        // 4x4 diagonal, solve on subset {1, 3}.
        let a = Csr::from_triplets(
            4,
            4,
            &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0), (3, 3, 4.0)],
        );
        let terms: Vec<(Complex64, &Csr)> = vec![(Complex64::new(1.0, 0.0), &a)];
        let f = ReducedFactor::new(&terms, &[1, 3], "test").unwrap();
        let x = f.solve_reduced(&[Complex64::new(2.0, 0.0), Complex64::new(8.0, 0.0)]);
        assert_relative_eq!(x[0].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(x[1].re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn solve_refined_flags_bad_factor() {
        // Factor of A used against a DIFFERENT operator: the residual check
        // must fire rather than silently returning the wrong solution.
        let n = 5;
        let mut band = BandMatC::zeros(n, 0, 0);
        for i in 0..n {
            band.add(i, i, Complex64::new(1.0, 0.0));
        }
        let lu = band.factor("test").unwrap();
        let rhs = vec![Complex64::new(1.0, 0.0); n];
        let wrong_op = |x: &[Complex64]| x.iter().map(|v| v * 3.0).collect::<Vec<_>>();
        match solve_refined(wrong_op, &lu, &rhs, "test") {
            Err(Error::ResidualCheck { .. }) => {}
            other => panic!("expected ResidualCheck, got {other:?}"),
        }
    }

    #[test]
    fn smallest_eigenvalue_of_dirichlet_laplacian_path() {
        // Tridiagonal (2, -1) with M = I: eigenvalues 4 sin²(kπ / (2(n+1))).
        let n = 30;
        let mut trips = Vec::new();
        let mut m_trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 2.0));
            m_trips.push((i, i, 1.0));
            if i + 1 < n {
                trips.push((i, i + 1, -1.0));
                trips.push((i + 1, i, -1.0));
            }
        }
        let a = Csr::from_triplets(n, n, &trips);
        let m = Csr::from_triplets(n, n, &m_trips);
        let r = smallest_generalized_eigenvalue(&a, &m, &identity_keep(n), "test").unwrap();
        let exact = 4.0 * (std::f64::consts::PI / (2.0 * (n as f64 + 1.0))).sin().powi(2);
        assert_relative_eq!(r.value, exact, max_relative = 1e-10);
    }

    #[test]
    fn smallest_nonzero_eigenvalue_of_neumann_laplacian_path() {
        // Path-graph Laplacian: eigenvalues 4 sin²(kπ / (2n)), k = 0..n-1;
        // the smallest nonzero one is k = 1.
        let n = 30;
        let mut trips = Vec::new();
        let mut m_trips = Vec::new();
        for i in 0..n {
            let deg = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            trips.push((i, i, deg));
            m_trips.push((i, i, 1.0));
            if i + 1 < n {
                trips.push((i, i + 1, -1.0));
                trips.push((i + 1, i, -1.0));
            }
        }
        let a = Csr::from_triplets(n, n, &trips);
        let m = Csr::from_triplets(n, n, &m_trips);
        let r =
            smallest_nonzero_generalized_eigenvalue(&a, &m, &identity_keep(n), "test").unwrap();
        let exact = 4.0 * (std::f64::consts::PI / (2.0 * n as f64)).sin().powi(2);
        assert_relative_eq!(r.value, exact, max_relative = 1e-8);
    }

    #[test]
    fn largest_eigenvalue_power_iteration() {
        let n = 12;
        let b = Csr::from_triplets(
            n,
            n,
            &(0..n).map(|i| (i, i, (i + 1) as f64)).collect::<Vec<_>>(),
        );
        let c = Csr::from_triplets(n, n, &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>());
        let r = largest_generalized_eigenvalue(&b, &c, &identity_keep(n), "test").unwrap();
        assert_relative_eq!(r.value, n as f64, max_relative = 1e-9);
    }

    #[test]
    fn hashed_unit_is_deterministic_and_centered() {
        let a = hashed_unit(42, 7);
        let b = hashed_unit(42, 7);
        assert_eq!(a, b);
        let mean: f64 = (0..10_000).map(|i| hashed_unit(1, i)).sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.01, "mean {mean} not near zero");
    }
}
