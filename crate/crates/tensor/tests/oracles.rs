//! Ops checked against naive formula evaluations and finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xnlu_tensor::{grad_check, Graph, ParamStore, Tensor, Var};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(i, p) * b.at(p, j);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::from_f64(vec![2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (m, k, n) in [(1, 1, 1), (3, 5, 2), (7, 4, 9)] {
        let (ta, tb) = (random_matrix(&mut rng, m, k, 2.0), random_matrix(&mut rng, k, n, 2.0));
        let expected = naive_matmul(&ta, &tb);
        let mut g = Graph::new();
        let (a, b) = (g.constant(ta), g.constant(tb.clone()));
        let c = g.matmul(a, b).unwrap();
        for (x, y) in g.value(c).data().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = g.transpose(b).unwrap();
        let c2 = g.matmul_nt(a, bt).unwrap();
        assert!(g.value(c2).max_abs_diff(g.value(c)).unwrap() < 1e-12);
    }
}

#[test]
fn softmax_and_losses_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random_matrix(&mut rng, 6, 4, 5.0);
    let targets = [0usize, 3, 1, 2, 2, 0];

    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let sm = g.softmax_rows(x, None).unwrap();
    let ce = g.cross_entropy(x, &targets, None).unwrap();

    let mut expected_ce = 0.0;
    for r in 0..6 {
        let row = logits.row(r);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for c in 0..4 {
            assert!((g.value(sm).at(r, c) - row[c].exp() / z).abs() < 1e-12);
        }
        expected_ce += -(row[targets[r]].exp() / z).ln();
    }
    assert!((g.value(ce).item() - expected_ce / 6.0).abs() < 1e-12);

    let ys: Vec<f64> = (0..24).map(|i| f64::from(i % 3 == 0)).collect();
    let bce = g.bce_with_logits(x, &ys, None).unwrap();
    let expected_bce: f64 = logits
        .data()
        .iter()
        .zip(&ys)
        .map(|(&z, &y)| {
            let p = 1.0 / (1.0 + (-z).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / 24.0;
    assert!((g.value(bce).item() - expected_bce).abs() < 1e-12);
}

#[test]
fn masked_losses_average_over_valid_entries_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random_matrix(&mut rng, 3, 2, 3.0);
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let mask = [true, false, true, true, false, false];
    let ys = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let full = g.bce_with_logits(x, &ys, Some(&mask)).unwrap();
    let kept: Vec<f64> = logits.data().iter().zip(&mask).filter(|(_, &m)| m).map(|(&z, _)| z).collect();
    let kept_y: Vec<f64> = ys.iter().zip(&mask).filter(|(_, &m)| m).map(|(&y, _)| y).collect();
    let k = g.constant(Tensor::matrix(1, kept.len(), kept).unwrap());
    let direct = g.bce_with_logits(k, &kept_y, None).unwrap();
    assert!((g.value(full).item() - g.value(direct).item()).abs() < 1e-14);
}

/// One scalar-valued function per primitive, each wired through parameters so
/// the check covers every input that can carry a gradient.
fn check(name: &str, shapes: &[(usize, usize)], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    check_with_step(name, shapes, 1e-5, f)
}

fn check_with_step(name: &str, shapes: &[(usize, usize)], h: f64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(format!("p{i}"), random_matrix(&mut rng, r, c, 1.0)).unwrap())
        .collect();
    let report = grad_check(&mut store, h, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        Ok(f(g, &vars))
    })
    .unwrap();
    assert!(
        report.max_rel_error < 1e-6,
        "{name}: relative error {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

/// Weighted sum with fixed irregular coefficients so that no op sees a
/// uniform upstream gradient.
fn probe(g: &mut Graph<f64>, x: Var) -> Var {
    let n = g.value(x).numel();
    let shape = g.shape(x).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let w = g.constant(Tensor::new(shape, w).unwrap());
    g.dot(x, w).unwrap()
}

#[test]
fn sum_of_softmax_has_exact_gradient() {
    // Rows sum to one for every input, so the true gradient is zero and central
    // differences are exact at any step; a wide step keeps roundoff under the 1e-8 floor.
    check_with_step("softmax_sum", &[(3, 5)], 0.5, |g, v| {
        let s = g.softmax_rows(v[0], None).unwrap();
        g.sum(s)
    });
}

#[test]
fn every_primitive_passes_grad_check() {
    check("matmul", &[(3, 4), (4, 2)], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        probe(g, y)
    });
    check("matmul_nt", &[(3, 4), (5, 4)], |g, v| {
        let y = g.matmul_nt(v[0], v[1]).unwrap();
        probe(g, y)
    });
    check("transpose", &[(2, 3)], |g, v| {
        let y = g.transpose(v[0]).unwrap();
        probe(g, y)
    });
    check("add_mul_scale", &[(2, 3), (2, 3)], |g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let m = g.mul(a, v[1]).unwrap();
        let s = g.scale(m, -1.7);
        probe(g, s)
    });
    check("add_row", &[(3, 4), (1, 4)], |g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        probe(g, y)
    });
    check("gelu", &[(2, 5)], |g, v| {
        let y = g.gelu(v[0]);
        probe(g, y)
    });
    check("softmax_masked", &[(3, 4)], |g, v| {
        let mask = [true, false, true, true];
        let y = g.softmax_rows(v[0], Some(&mask)).unwrap();
        probe(g, y)
    });
    check("layer_norm", &[(3, 5), (1, 5), (1, 5)], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        probe(g, y)
    });
    check("gather", &[(4, 3)], |g, v| {
        let y = g.gather_rows(v[0], &[2, 0, 2, 3]).unwrap();
        probe(g, y)
    });
    check("concat_slice", &[(2, 3), (2, 2), (1, 3)], |g, v| {
        let c = g.concat_cols(&[v[0], v[1]]).unwrap();
        let s = g.slice_cols(c, 1, 3).unwrap();
        let r = g.concat_rows(&[v[0], v[2]]).unwrap();
        let r = g.slice_rows(r, 1, 2).unwrap();
        let a = probe(g, s);
        let b = probe(g, r);
        g.weighted_sum(&[(a, 1.0), (b, 0.5)]).unwrap()
    });
    check("row_sums_repeat_reshape", &[(3, 4), (1, 4)], |g, v| {
        let rs = g.row_sums(v[0]).unwrap();
        let rep = g.repeat_rows(v[1], 3).unwrap();
        let reshaped = g.reshape(rep, &[4, 3]).unwrap();
        let a = probe(g, rs);
        let b = probe(g, reshaped);
        let m = g.mean(v[0]);
        g.weighted_sum(&[(a, 1.0), (b, 1.0), (m, 2.0)]).unwrap()
    });
    check("cross_entropy", &[(4, 3)], |g, v| {
        g.cross_entropy(v[0], &[0, 2, 1, 9], Some(&[true, true, true, false])).unwrap()
    });
    check("bce", &[(2, 3)], |g, v| {
        g.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0], Some(&[true, true, false, true, true, true]))
            .unwrap()
    });
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_stay_finite(
        vals in prop::collection::vec(-1e3f32..1e3, 12),
        mask_bits in prop::collection::vec(any::<bool>(), 4),
    ) {
        let mut mask = mask_bits.clone();
        mask[0] = true;
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::matrix(3, 4, vals).unwrap());
        let y = g.softmax_rows(x, Some(&mask)).unwrap();
        let out = g.value(y);
        prop_assert!(out.is_finite());
        for r in 0..3 {
            let total: f32 = out.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-5);
            for (c, &m) in mask.iter().enumerate() {
                if !m {
                    prop_assert_eq!(out.at(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn forward_ops_are_finite_on_large_inputs(vals in prop::collection::vec(-1e3f32..1e3, 8)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::matrix(2, 4, vals).unwrap());
        let gain = g.constant(Tensor::ones(&[4]));
        let bias = g.constant(Tensor::zeros(&[4]));
        let ln = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let ge = g.gelu(x);
        let ce = g.cross_entropy(x, &[1, 3], None).unwrap();
        let bce = g.bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0], None).unwrap();
        let xt = g.transpose(x).unwrap();
        let mm = g.matmul(x, xt).unwrap();
        for v in [ln, ge, ce, bce, mm] {
            prop_assert!(g.value(v).is_finite());
        }
    }
}
