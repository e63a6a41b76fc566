//! Implementation paths checked against brute-force references.

// Oracles are plain index loops on purpose.
#![allow(clippy::needless_range_loop)]

mod common;

use common::{gaussian, rel_err, rng, uniform};
use rand::Rng;
use wta_core::index::{query_votes, select_active, select_batch};
use wta_core::layer::{
    backward_dense, backward_sparse, forward_dense, forward_sparse, softmax_xent_dense,
    softmax_xent_sparse,
};
use wta_core::wta::{gen_permutations, hash_matrix, hash_vector, hash_vector_all};
use wta_core::{ActiveSet, DenseMatrix, HashCode, MultiHashIndex, PermutationSet, WtaConfig};

fn perms(k: usize, q: usize, ne: usize, ns: usize, seed: u64) -> PermutationSet {
    gen_permutations(WtaConfig {
        input_dim: k,
        num_hashes: q,
        sections: ns,
        elems: ne,
        seed,
    })
    .unwrap()
}

/// Direct restatement of the WTA definition.
fn hash_oracle(x: &[f32], p: &PermutationSet, q: usize) -> u32 {
    let c = p.config();
    let mut code = 0u64;
    for s in 0..c.sections {
        let sec = p.section(q, s);
        let vals: Vec<f32> = sec.iter().map(|&i| x[i as usize]).collect();
        let max = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let pos = vals.iter().position(|&v| v == max).unwrap();
        code += pos as u64 * (c.elems as u64).pow(s as u32);
    }
    code as u32
}

#[test]
fn hash_matrix_equals_row_loop() {
    let mut r = rng(1);
    let p = perms(16, 12, 4, 3, 9);
    let x = gaussian(&mut r, 8, 16);
    let codes = hash_matrix(&x, &p).unwrap();
    for j in 0..8 {
        for q in 0..12 {
            assert_eq!(codes.row(j)[q], hash_oracle(x.row(j), &p, q));
            assert_eq!(codes.row(j)[q], hash_vector(x.row(j), &p, q).unwrap().0);
        }
    }
    let dup = DenseMatrix::from_rows(&[x.row(3), x.row(3)]).unwrap();
    let c = hash_matrix(&dup, &p).unwrap();
    assert_eq!(c.row(0), c.row(1));
    let one = hash_matrix(&DenseMatrix::from_rows(&[x.row(0)]).unwrap(), &p).unwrap();
    let all: Vec<u32> = hash_vector_all(x.row(0), &p)
        .unwrap()
        .iter()
        .map(|c| c.0)
        .collect();
    assert_eq!(one.row(0), &all[..]);
}

#[test]
fn index_equals_brute_force_binning() {
    let mut r = rng(2);
    let p = perms(16, 8, 4, 2, 3);
    let w = gaussian(&mut r, 32, 16);
    let idx = MultiHashIndex::build(&w, &p).unwrap();
    for q in 0..8 {
        let mut seen = Vec::new();
        for code in 0..idx.num_bins() as u32 {
            let bin = idx.bin(q, HashCode(code));
            let want: Vec<u32> = (0..32u32)
                .filter(|&i| hash_oracle(w.row(i as usize), &p, q) == code)
                .collect();
            assert_eq!(bin, &want[..]);
            seen.extend_from_slice(bin);
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());
    }
}

#[test]
fn votes_equal_pairwise_count() {
    let mut r = rng(3);
    let p = perms(20, 16, 3, 2, 4);
    let w = gaussian(&mut r, 40, 20);
    let idx = MultiHashIndex::build(&w, &p).unwrap();
    for _ in 0..10 {
        let x = gaussian(&mut r, 1, 20);
        let sc = hash_vector_all(x.row(0), &p).unwrap();
        let votes = query_votes(&sc, &idx).unwrap();
        for i in 0..40u32 {
            let want = (0..16)
                .filter(|&q| hash_oracle(w.row(i as usize), &p, q) == sc[q].0)
                .count() as u32;
            assert_eq!(votes.get(i), want, "unit {i}");
        }
        assert!(votes.entries.iter().all(|&(_, v)| v > 0));
    }
}

#[test]
fn singleton_index_gets_every_vote() {
    let p = perms(8, 6, 4, 2, 1);
    let w = DenseMatrix::from_rows(&[[0.3f32, 0.1, 0.9, -0.4, 0.0, 0.5, 0.2, 0.7]]).unwrap();
    let idx = MultiHashIndex::build(&w, &p).unwrap();
    let sc = hash_vector_all(w.row(0), &p).unwrap();
    assert_eq!(query_votes(&sc, &idx).unwrap().entries, vec![(0, 6)]);
}

#[test]
fn select_batch_equals_per_row_path() {
    let mut r = rng(4);
    let p = perms(24, 32, 4, 2, 8);
    let w = gaussian(&mut r, 60, 24);
    let idx = MultiHashIndex::build(&w, &p).unwrap();
    let x = gaussian(&mut r, 10, 24);
    let codes = hash_matrix(&x, &p).unwrap();
    let forced: Vec<Vec<u32>> = (0..10).map(|j| vec![(j * 7 % 60) as u32]).collect();
    let batch = select_batch(&codes, &idx, 5, &forced).unwrap();
    for j in 0..10 {
        let sc: Vec<HashCode> = codes.row(j).iter().map(|&c| HashCode(c)).collect();
        let single = select_active(&query_votes(&sc, &idx).unwrap(), 5, &forced[j]);
        assert_eq!(batch[j], single);
        assert!(batch[j].contains(forced[j][0]));
    }
    let no_force = select_batch(&codes, &idx, 5, &[]).unwrap();
    assert!(no_force.iter().all(|s| s.entries.iter().all(|e| !e.forced)));
}

/// f64 triple loop; also returns `Σ_k |w_ik x_jk|` as the error scale.
fn triple_loop(x: &DenseMatrix, w: &DenseMatrix) -> Vec<(f64, f64)> {
    let mut y = vec![(0.0, 0.0); x.rows() * w.rows()];
    for j in 0..x.rows() {
        for i in 0..w.rows() {
            for k in 0..x.cols() {
                let t = x.get(j, k) as f64 * w.get(i, k) as f64;
                y[j * w.rows() + i].0 += t;
                y[j * w.rows() + i].1 += t.abs();
            }
        }
    }
    y
}

#[test]
fn forward_dense_equals_triple_loop() {
    let mut r = rng(5);
    for (m, n, k) in [(4, 5, 3), (7, 33, 19), (1, 1, 64)] {
        let x = uniform(&mut r, m, k);
        let w = uniform(&mut r, n, k);
        let y = forward_dense(&x, &w).unwrap();
        for (a, (b, scale)) in y.as_slice().iter().zip(triple_loop(&x, &w)) {
            assert!(
                (*a as f64 - b).abs() <= 1e-6 * scale.max(1e-3),
                "{a} vs {b}"
            );
        }
    }
}

fn random_active(r: &mut impl Rng, m: usize, n: usize, a: usize) -> Vec<ActiveSet> {
    (0..m)
        .map(|_| {
            let mut units: Vec<u32> = (0..n as u32).collect();
            for i in 0..a {
                let j = r.random_range(i..n);
                units.swap(i, j);
            }
            let mut s = ActiveSet::all(0);
            for &u in &units[..a] {
                s.entries.push(wta_core::ActiveUnit {
                    unit: u,
                    votes: 1,
                    forced: false,
                });
            }
            s
        })
        .collect()
}

#[test]
fn forward_sparse_matches_dense_at_active_coordinates() {
    let mut r = rng(6);
    let x = uniform(&mut r, 6, 40);
    let w = uniform(&mut r, 32, 40);
    let y = forward_dense(&x, &w).unwrap();
    let active = random_active(&mut r, 6, 32, 4);
    let out = forward_sparse(&x, &w, &active, -1.0).unwrap();
    for j in 0..6 {
        let (units, vals) = out.logits.row(j);
        assert_eq!(units.to_vec(), active[j].units().collect::<Vec<_>>());
        for (&u, &v) in units.iter().zip(vals) {
            assert_eq!(v.to_bits(), y.get(j, u as usize).to_bits());
        }
    }
    let full = vec![ActiveSet::all(32); 6];
    let out = forward_sparse(&x, &w, &full, 0.0).unwrap();
    assert_eq!(out.logits.densify(32, f32::NAN), y);
}

/// Dense softmax over logits with inactive units materialised at `c`,
/// all in f64.
fn materialised_softmax(
    out: &wta_core::SparseOutput,
    labels: &[u32],
) -> (f64, Vec<Vec<(u32, f64)>>) {
    let m = labels.len();
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (j, &label) in labels.iter().enumerate() {
        let (units, vals) = out.logits.row(j);
        let mut full = vec![out.default_logit as f64; out.total_units];
        for (&u, &v) in units.iter().zip(vals) {
            full[u as usize] = v as f64;
        }
        let mx = full.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = full.iter().map(|v| (v - mx).exp()).sum();
        total += -(full[label as usize] - mx - z.ln());
        grads.push(
            units
                .iter()
                .map(|&u| {
                    let p = (full[u as usize] - mx).exp() / z;
                    (u, (p - if u == label { 1.0 } else { 0.0 }) / m as f64)
                })
                .collect(),
        );
    }
    (total / m as f64, grads)
}

#[test]
fn sparse_softmax_equals_materialised_dense() {
    let mut r = rng(7);
    for trial in 0..20 {
        let (m, n, k, a) = (5, 50, 12, 6);
        let x = uniform(&mut r, m, k);
        let w = gaussian(&mut r, n, k);
        let mut active = random_active(&mut r, m, n, a);
        let labels: Vec<u32> = (0..m).map(|_| r.random_range(0..n as u32)).collect();
        for (s, &l) in active.iter_mut().zip(&labels) {
            if !s.contains(l) {
                s.entries.push(wta_core::ActiveUnit {
                    unit: l,
                    votes: 0,
                    forced: true,
                });
            }
        }
        let c = [0.0, -1.0, 0.5][trial % 3];
        let out = forward_sparse(&x, &w, &active, c).unwrap();
        let (loss, dy) = softmax_xent_sparse(&out, &labels).unwrap();
        let (want_loss, want) = materialised_softmax(&out, &labels);
        assert!(
            rel_err(loss, want_loss, 1e-8) < 1e-5,
            "{loss} vs {want_loss}"
        );
        for j in 0..m {
            let (units, vals) = dy.row(j);
            for ((&u, &g), &(wu, wg)) in units.iter().zip(vals).zip(&want[j]) {
                assert_eq!(u, wu);
                assert!(rel_err(g as f64, wg, 1e-6) < 1e-5, "{g} vs {wg}");
            }
        }
    }
}

#[test]
fn full_activation_sparse_softmax_equals_dense_softmax() {
    let mut r = rng(8);
    let x = uniform(&mut r, 4, 10);
    let w = gaussian(&mut r, 9, 10);
    let labels = [0u32, 8, 3, 3];
    let full = vec![ActiveSet::all(9); 4];
    let out = forward_sparse(&x, &w, &full, 0.0).unwrap();
    let (ls, dys) = softmax_xent_sparse(&out, &labels).unwrap();
    let y = forward_dense(&x, &w).unwrap();
    let (ld, dyd) = softmax_xent_dense(&y, &labels).unwrap();
    assert!(rel_err(ls, ld, 1e-9) < 1e-12);
    assert_eq!(dys.densify(9, 0.0), dyd);
}

#[test]
fn backward_sparse_equals_dense_on_densified_pattern() {
    let mut r = rng(9);
    for _ in 0..10 {
        let (m, n, k) = (6, 30, 17);
        let x = uniform(&mut r, m, k);
        let w = uniform(&mut r, n, k);
        let active = random_active(&mut r, m, n, 5);
        let dy = wta_core::SparseRows::from_rows(
            &active
                .iter()
                .map(|s| {
                    s.units()
                        .map(|u| (u, r.random_range(-1.0f32..1.0)))
                        .collect()
                })
                .collect::<Vec<_>>(),
        );
        let sparse = backward_sparse(&dy, &x, &w, &active, true).unwrap();
        let dense = backward_dense(&dy.densify(n, 0.0), &x, &w, true).unwrap();
        let mut union: Vec<u32> = active.iter().flat_map(|s| s.units()).collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(sparse.dw.units(), &union[..]);
        for i in 0..n as u32 {
            match sparse.dw.get(i) {
                Some(row) => {
                    for (a, b) in row.iter().zip(dense.dw.row(i as usize)) {
                        assert!(rel_err(*a as f64, *b as f64, 1e-6) < 1e-6);
                    }
                }
                None => assert!(dense.dw.row(i as usize).iter().all(|&v| v == 0.0)),
            }
        }
        let (sx, dx) = (sparse.dx.unwrap(), dense.dx.unwrap());
        for (a, b) in sx.as_slice().iter().zip(dx.as_slice()) {
            assert!(rel_err(*a as f64, *b as f64, 1e-6) < 1e-6);
        }
    }
}

#[test]
fn full_active_backward_is_bitwise_dense() {
    let mut r = rng(10);
    let (m, n, k) = (5, 21, 13);
    let x = uniform(&mut r, m, k);
    let w = uniform(&mut r, n, k);
    // vote-ordered (not id-ordered) full sets
    let active: Vec<ActiveSet> = (0..m)
        .map(|j| {
            let mut s = ActiveSet::all(n);
            s.entries.rotate_left(j * 3 % n);
            s
        })
        .collect();
    let dy = wta_core::SparseRows::from_rows(
        &active
            .iter()
            .map(|s| {
                s.units()
                    .map(|u| (u, r.random_range(-1.0f32..1.0)))
                    .collect()
            })
            .collect::<Vec<_>>(),
    );
    let sparse = backward_sparse(&dy, &x, &w, &active, true).unwrap();
    let dense = backward_dense(&dy.densify(n, 0.0), &x, &w, true).unwrap();
    assert_eq!(sparse.dw.to_dense(n), dense.dw);
    assert_eq!(sparse.dx.unwrap(), dense.dx.unwrap());
}

/// `L(W) = Σ_{j,i} (X·Wᵀ)_{ji} G_{ji}` in f64.
fn linear_objective(x: &[f64], w: &[f64], g: &[f64], m: usize, n: usize, k: usize) -> f64 {
    let mut l = 0.0;
    for j in 0..m {
        for i in 0..n {
            let y: f64 = (0..k).map(|c| x[j * k + c] * w[i * k + c]).sum();
            l += y * g[j * n + i];
        }
    }
    l
}

#[test]
fn backward_dense_matches_central_differences() {
    let mut r = rng(11);
    let h = 1e-5;
    for _ in 0..20 {
        let (m, n, k) = (
            r.random_range(1..=4),
            r.random_range(1..=6),
            r.random_range(1..=8),
        );
        let x = uniform(&mut r, m, k);
        let w = uniform(&mut r, n, k);
        let g = uniform(&mut r, m, n);
        let grad = backward_dense(&g, &x, &w, true).unwrap();
        let xd: Vec<f64> = x.as_slice().iter().map(|&v| v as f64).collect();
        let gd: Vec<f64> = g.as_slice().iter().map(|&v| v as f64).collect();
        let mut wd: Vec<f64> = w.as_slice().iter().map(|&v| v as f64).collect();
        for e in 0..n * k {
            let orig = wd[e];
            wd[e] = orig + h;
            let up = linear_objective(&xd, &wd, &gd, m, n, k);
            wd[e] = orig - h;
            let down = linear_objective(&xd, &wd, &gd, m, n, k);
            wd[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grad.dw.as_slice()[e] as f64;
            assert!(rel_err(an, fd, 1e-3) < 1e-4, "dW[{e}]: {an} vs {fd}");
        }
        let wd: Vec<f64> = w.as_slice().iter().map(|&v| v as f64).collect();
        let mut xd = xd;
        for e in 0..m * k {
            let orig = xd[e];
            xd[e] = orig + h;
            let up = linear_objective(&xd, &wd, &gd, m, n, k);
            xd[e] = orig - h;
            let down = linear_objective(&xd, &wd, &gd, m, n, k);
            xd[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grad.dx.as_ref().unwrap().as_slice()[e] as f64;
            assert!(rel_err(an, fd, 1e-3) < 1e-4, "dX[{e}]: {an} vs {fd}");
        }
    }
}
