//! Dense linear-algebra helpers shared by the tensor-network and divergence
//! code: Frobenius-normalized power iteration for dominant eigenpairs of
//! matrix-free superoperators, PSD factorization with floored inverses, and
//! the row-major vec/Kronecker conventions used for Liouville forms.
//!
//! The superoperators here act on bond-space matrices (`rho -> sum_a A_a rho
//! B_a^T` and friends), so the "vector" handed to the solver is itself a
//! `DMatrix<f64>`. None of the routines ever materialize the d^2 x d^2
//! operator; everything goes through the caller's `apply` closure.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Convergence knobs for the dominant-eigenvalue solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Relative residual target: accept when |Av - eta v| <= tol * max(|eta|, eps).
    pub tol: f64,
    /// Hard cap on operator applications for the plain power stage.
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-13,
            max_iters: 50_000,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        SolverSettings {
            tol,
            ..Default::default()
        }
    }
}

/// Outcome of a dominant-eigenvalue computation.
///
/// When the dominant eigenvalue is real, `value` carries its sign and
/// `matrix` is the converged eigenmatrix (Frobenius norm 1). When power
/// iterates settle into a two-dimensional rotating subspace (complex pair or
/// a +/- real pair), only `modulus` is meaningful; `nonreal` marks the
/// complex case and `matrix` holds the last real iterate as a representative
/// of the invariant plane.
#[derive(Debug, Clone)]
pub struct DominantEig {
    pub value: f64,
    pub modulus: f64,
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub nonreal: bool,
}

const TINY: f64 = 1e-300;

fn frob_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

// y <- alpha * x + beta * y on bond matrices (axpy in Frobenius space)
fn maxpy(y: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>, beta: f64) {
    y.zip_apply(x, |yi, xi| *yi = beta * *yi + alpha * xi);
}

/// Dominant eigenpair of a matrix-free linear map on bond matrices.
///
/// Plain power iteration with two extraction rules checked each step:
/// a rank-1 fit `Av ~ eta v` for simple real dominance, and a rank-2 fit
/// `Av ~ a v + b v_prev` whose companion roots recover the dominant modulus
/// when the top of the spectrum is a conjugate or +/- pair. If the residual
/// stalls (tight spectral clusters), the solver escalates to blocked
/// subspace iteration with Rayleigh-Ritz extraction; the escalation is
/// deterministic and only widens the search basis, so results stay
/// reproducible run to run.
pub fn dominant_eig<F>(
    what: &str,
    apply: F,
    start: DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<DominantEig>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let dim = start.nrows() * start.ncols();
    let n0 = frob_norm(&start);
    if !(n0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "{what}: zero start matrix for eigen-solver"
        )));
    }
    let mut v = &start / n0;
    // previous normalized iterate and the scale s with A v_prev = s * v
    let mut prev: Option<(DMatrix<f64>, f64)> = None;
    let mut last_resid = f64::INFINITY;
    let mut stall_anchor = f64::INFINITY;
    let mut iterations = 0usize;

    while iterations < settings.max_iters {
        let w = apply(&v);
        iterations += 1;
        let lam = v.dot(&w);
        let resid = {
            let mut r = w.clone();
            maxpy(&mut r, -lam, &v, 1.0);
            frob_norm(&r)
        };
        if resid <= settings.tol * lam.abs().max(TINY) {
            return Ok(DominantEig {
                value: lam,
                modulus: lam.abs(),
                matrix: v,
                iterations,
                residual: resid,
                nonreal: false,
            });
        }
        let wn = frob_norm(&w);
        if wn <= TINY {
            // the operator annihilates the iterate; dominant action on the
            // reachable subspace is zero
            return Ok(DominantEig {
                value: 0.0,
                modulus: 0.0,
                matrix: v,
                iterations,
                residual: 0.0,
                nonreal: false,
            });
        }

        if let Some((vp, s)) = &prev {
            // least-squares fit of w in span{v, vp}
            let g = v.dot(vp);
            let det = 1.0 - g * g;
            if det > 1e-12 {
                let c1 = v.dot(&w);
                let c2 = vp.dot(&w);
                let a = (c1 - g * c2) / det;
                let b = (c2 - g * c1) / det;
                let mut r2 = w.clone();
                maxpy(&mut r2, -a, &v, 1.0);
                maxpy(&mut r2, -b, vp, 1.0);
                let plane_resid = frob_norm(&r2);
                if plane_resid <= settings.tol * wn {
                    // action on the plane in basis (v, vp): [[a, s], [b, 0]]
                    let disc = a * a + 4.0 * b * s;
                    if disc < 0.0 {
                        let modulus = (-b * s).sqrt();
                        return Ok(DominantEig {
                            value: modulus,
                            modulus,
                            matrix: v,
                            iterations,
                            residual: plane_resid,
                            nonreal: true,
                        });
                    }
                    let r_a = 0.5 * (a + disc.sqrt());
                    let r_b = 0.5 * (a - disc.sqrt());
                    let value = if r_a.abs() >= r_b.abs() { r_a } else { r_b };
                    // the iterate itself still carries the subdominant
                    // direction; recover the eigenvector of the plane
                    // section, u = v + (b/value) vp, and only accept it
                    // after a direct residual check
                    if value.abs() > TINY {
                        let mut u = v.clone();
                        maxpy(&mut u, b / value, vp, 1.0);
                        let un = frob_norm(&u);
                        if un > 1e-8 {
                            u /= un;
                            let wu = apply(&u);
                            iterations += 1;
                            let resid_u = {
                                let mut r = wu;
                                maxpy(&mut r, -value, &u, 1.0);
                                frob_norm(&r)
                            };
                            if resid_u <= settings.tol * value.abs().max(TINY) {
                                return Ok(DominantEig {
                                    value,
                                    modulus: value.abs(),
                                    matrix: u,
                                    iterations,
                                    residual: resid_u,
                                    nonreal: false,
                                });
                            }
                        }
                    }
                }
            }
        }

        prev = Some((v.clone(), wn));
        v = w / wn;
        last_resid = resid;

        // escalate when the projected time to target exceeds the budget
        if iterations % 1024 == 0 {
            if dim >= 2 && stall_anchor.is_finite() {
                let target = settings.tol * lam.abs().max(TINY);
                let ratio = resid / stall_anchor;
                let hopeless = if ratio >= 1.0 {
                    true
                } else {
                    let windows_needed = (target / resid).ln() / ratio.ln();
                    windows_needed * 1024.0 > (settings.max_iters - iterations) as f64
                };
                if hopeless {
                    return subspace_boost(what, &apply, v, settings, iterations);
                }
            }
            stall_anchor = resid;
        }
    }

    Err(Error::SolverFailure {
        what: what.to_string(),
        iterations,
        residual: last_resid,
    })
}

/// Blocked subspace iteration with Rayleigh-Ritz extraction, used when plain
/// power iteration stalls on a tight spectral cluster. The block is seeded
/// from the current iterate plus fixed pseudo-random directions, so the
/// escalated path is as deterministic as the plain one.
fn subspace_boost<F>(
    what: &str,
    apply: &F,
    seed_vec: DMatrix<f64>,
    settings: &SolverSettings,
    used_iters: usize,
) -> Result<DominantEig>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let (nr, nc) = seed_vec.shape();
    let dim = nr * nc;
    let k = 8usize.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x51b5_9ace_u64 ^ dim as u64);
    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    basis.push(seed_vec);
    while basis.len() < k {
        let m = DMatrix::from_fn(nr, nc, |_, _| rng.gen_range(-1.0..1.0));
        basis.push(m);
    }
    orthonormalize(&mut basis, &mut rng);

    let mut iterations = used_iters;
    let budget = settings.max_iters.saturating_mul(4);
    let mut last_resid;
    loop {
        let images: Vec<DMatrix<f64>> = basis.iter().map(|b| apply(b)).collect();
        iterations += k;
        // projected operator B[i][j] = <basis_i, A basis_j>
        let mut b = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                b[(i, j)] = basis[i].dot(&images[j]);
            }
        }
        let ritz = small_dominant(&b);
        // assemble the Ritz vector and its image without extra applies
        let mut u = DMatrix::<f64>::zeros(nr, nc);
        let mut au = DMatrix::<f64>::zeros(nr, nc);
        for i in 0..k {
            maxpy(&mut u, ritz.coords[i], &basis[i], 1.0);
            maxpy(&mut au, ritz.coords[i], &images[i], 1.0);
        }
        let un = frob_norm(&u).max(TINY);
        u /= un;
        au /= un;
        let theta = ritz.value;
        let mut r = au.clone();
        maxpy(&mut r, -theta, &u, 1.0);
        let resid = frob_norm(&r);
        last_resid = resid;
        if ritz.nonreal {
            // rotating dominant pair: validate the plane via the quadratic
            // (A^2 - 2 Re(theta) A + |theta|^2) u ~ 0
            let a2u = apply(&au);
            iterations += 1;
            let mut q = a2u;
            maxpy(&mut q, -2.0 * ritz.real_part, &au, 1.0);
            maxpy(&mut q, ritz.modulus * ritz.modulus, &u, 1.0);
            let qres = frob_norm(&q);
            if qres <= settings.tol.max(1e-12) * ritz.modulus * ritz.modulus {
                return Ok(DominantEig {
                    value: ritz.modulus,
                    modulus: ritz.modulus,
                    matrix: u,
                    iterations,
                    residual: qres,
                    nonreal: true,
                });
            }
        } else if resid <= settings.tol * theta.abs().max(TINY) {
            return Ok(DominantEig {
                value: theta,
                modulus: theta.abs(),
                matrix: u,
                iterations,
                residual: resid,
                nonreal: false,
            });
        }
        if iterations >= budget {
            return Err(Error::SolverFailure {
                what: what.to_string(),
                iterations,
                residual: last_resid,
            });
        }
        basis = images;
        orthonormalize(&mut basis, &mut rng);
    }
}

/// Modified Gram-Schmidt over Frobenius inner products; degenerate columns
/// are replaced by fresh random directions so the basis keeps full rank.
fn orthonormalize(basis: &mut [DMatrix<f64>], rng: &mut ChaCha8Rng) {
    let (nr, nc) = basis[0].shape();
    for i in 0..basis.len() {
        loop {
            for j in 0..i {
                let c = {
                    let (head, tail) = basis.split_at_mut(i);
                    tail[0].dot(&head[j])
                };
                let prev = basis[j].clone();
                maxpy(&mut basis[i], -c, &prev, 1.0);
            }
            let n = frob_norm(&basis[i]);
            if n > 1e-12 {
                basis[i] /= n;
                break;
            }
            basis[i] = DMatrix::from_fn(nr, nc, |_, _| rng.gen_range(-1.0..1.0));
        }
    }
}

struct SmallRitz {
    value: f64,
    modulus: f64,
    real_part: f64,
    nonreal: bool,
    coords: Vec<f64>,
}

/// Dominant eigenpair of a small dense matrix (the Rayleigh-Ritz projection).
/// Eigenvalues come from the full complex spectrum; the eigenvector comes
/// from inverse iteration with a slightly perturbed shift, which stays
/// accurate even when the projected spectrum is tightly clustered (exactly
/// the situation that triggers the escalation in the first place).
fn small_dominant(b: &DMatrix<f64>) -> SmallRitz {
    let k = b.nrows();
    let eigs = b.clone().complex_eigenvalues();
    let mut best = 0usize;
    for i in 0..eigs.len() {
        if eigs[i].norm() > eigs[best].norm() {
            best = i;
        }
    }
    let lam = eigs[best];
    let nonreal = lam.im.abs() > 1e-12 * lam.norm().max(TINY);

    let shift = lam * Complex::new(1.0 + 1e-10, 0.0) + Complex::new(1e-290, 0.0);
    let mut m: DMatrix<Complex<f64>> = b.map(|x| Complex::new(x, 0.0));
    for i in 0..k {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut z = DVector::<Complex<f64>>::from_element(k, Complex::new(1.0 / (k as f64).sqrt(), 0.0));
    for _ in 0..3 {
        match lu.solve(&z) {
            Some(y) => {
                let n = y.norm();
                if n > TINY {
                    z = y.unscale(n);
                } else {
                    break;
                }
            }
            None => break,
        }
    }
    // rotate away the global phase so the real part carries the direction;
    // for a conjugate pair the real part is a representative of the plane
    let mut jmax = 0usize;
    for j in 0..k {
        if z[j].norm() > z[jmax].norm() {
            jmax = j;
        }
    }
    let phase = z[jmax] / Complex::new(z[jmax].norm().max(TINY), 0.0);
    let rotated = z.unscale(1.0).map(|c| c / phase);
    let mut coords: Vec<f64> = rotated.iter().map(|c| c.re).collect();
    let cn = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
    if cn > TINY {
        for c in &mut coords {
            *c /= cn;
        }
    }
    SmallRitz {
        value: if nonreal { lam.norm() } else { lam.re },
        modulus: lam.norm(),
        real_part: lam.re,
        nonreal,
        coords,
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: DVector<f64>,
    /// Columns are eigenvectors, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

/// Cyclic Jacobi diagonalization. Quadratically convergent and, unlike a
/// tridiagonalize-then-QL route, structurally incapable of pairing an
/// eigenvalue with the wrong eigenvector: entry i of the final diagonal
/// belongs to column i of the accumulated rotations by construction.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetric eigen needs a square matrix");
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(TINY);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if (2.0 * off).sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                // stable closed form for the smaller rotation angle
                let t = tau.signum() / (tau.abs() + (tau * tau + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymEigen {
        eigenvalues: a.diagonal(),
        eigenvectors: v,
    }
}

/// Symmetrize and clamp negative eigenvalues to zero, preserving the
/// dominant positive part. Used on fixed points that are PSD in exact
/// arithmetic but carry numerical noise.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym_eigen(&sym);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let u = eig.eigenvectors.column(i);
            // out += l * u u^T
            out.ger(l, &u, &u, 1.0);
        }
    }
    out
}

/// Deterministically ordered SVD: singular values descending, ties broken by
/// the original index so repeated runs agree bit for bit.
pub fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Gauge("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Gauge("svd failed".into()))?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap().then(a.cmp(&b)));
    let k = sv.len();
    let mut u_s = DMatrix::zeros(u.nrows(), k);
    let mut vt_s = DMatrix::zeros(k, vt.ncols());
    let mut s_s = Vec::with_capacity(k);
    for (new, &old) in order.iter().enumerate() {
        u_s.set_column(new, &u.column(old));
        vt_s.set_row(new, &vt.row(old));
        s_s.push(sv[old]);
    }
    Ok((u_s, s_s, vt_s))
}

/// Row-major vectorization: vec(M)[i*ncols + j] = M[i, j]. With this
/// convention vec(A rho B) = (A kron B^T) vec(rho), which is the identity the
/// Liouville generators are built on.
pub fn vec_rm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (nr, nc) = m.shape();
    let mut out = DMatrix::zeros(nr * nc, 1);
    for i in 0..nr {
        for j in 0..nc {
            out[(i * nc + j, 0)] = m[(i, j)];
        }
    }
    out
}

pub fn unvec_rm(v: &DMatrix<f64>, nr: usize, nc: usize) -> DMatrix<f64> {
    assert_eq!(v.nrows(), nr * nc);
    DMatrix::from_fn(nr, nc, |i, j| v[(i * nc + j, 0)])
}

/// Shannon entropy in bits; weights below the clamp threshold are dropped.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 1e-14 {
            h -= p * p.log2();
        }
    }
    h
}
