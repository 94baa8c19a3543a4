use mmdr_core::embeddings::{
    l2_normalize, mean_pool_images, read_store_from_bytes, write_store_to, EmbeddingStore, ImageGroup, StoreKind,
};
use mmdr_core::fusion::{fuse, fuse_grad, FusionMode, FusionParams, MlpHead};
use mmdr_core::train::{bce_loss, infonce_loss, SquareMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4.0f32..4.0, d).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..9).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn store_round_trips(d in 1usize..24, rows in 0usize..12, seed in any::<u64>(), normalized in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = EmbeddingStore::new(StoreKind::Image, d, normalized);
        for i in 0..rows {
            let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0f32) + 1.5).collect();
            let v = if normalized { l2_normalize(&v).unwrap() } else { v };
            store.push(format!("doc{i}#{}", i % 3), &v).unwrap();
        }
        let mut bytes = Vec::new();
        write_store_to(&store, &mut bytes).unwrap();
        let back = read_store_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &store);
        let mut again = Vec::new();
        write_store_to(&back, &mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn pooling_ignores_member_order_and_is_linear(
        members in prop::collection::vec(vector(6), 1..6),
        c in 0.25f32..4.0,
        rot in 0usize..6,
    ) {
        let mut store = EmbeddingStore::new(StoreKind::Image, 6, false);
        let mut scaled = EmbeddingStore::new(StoreKind::Image, 6, false);
        for (k, v) in members.iter().enumerate() {
            store.push(format!("d#{k}"), v).unwrap();
            scaled.push(format!("d#{k}"), &v.iter().map(|x| x * c).collect::<Vec<_>>()).unwrap();
        }
        let mut ids: Vec<String> = (0..members.len()).map(|k| format!("d#{k}")).collect();
        let group = ImageGroup { doc_id: "d".into(), member_ids: ids.clone() };
        let pooled = mean_pool_images(&group, &store).unwrap();
        let rot = rot % ids.len();
        ids.rotate_left(rot);
        let permuted = mean_pool_images(&ImageGroup { doc_id: "d".into(), member_ids: ids }, &store).unwrap();
        let times_c = mean_pool_images(&group, &scaled).unwrap();
        for i in 0..6 {
            let naive = members.iter().map(|m| m[i] as f64).sum::<f64>() / members.len() as f64;
            prop_assert!((pooled[i] as f64 - naive).abs() <= 1e-5);
            prop_assert!((permuted[i] - pooled[i]).abs() <= 1e-6);
            prop_assert!((times_c[i] - c * pooled[i]).abs() <= 1e-4 * (1.0 + c));
        }
    }

    #[test]
    fn normalize_gives_unit_norm_and_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
        let u = l2_normalize(&v).unwrap();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-12);
        let uu = l2_normalize(&u).unwrap();
        for (a, b) in u.iter().zip(&uu) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn losses_are_transpose_invariant(rows in matrix(), scale in 0.5f64..30.0, bias in -15.0f64..5.0, tau in 0.01f64..2.0) {
        let s = SquareMatrix::from_rows(&rows).unwrap();
        let t = s.transpose();
        prop_assert!((bce_loss(&s, scale, bias, 3.0).unwrap() - bce_loss(&t, scale, bias, 3.0).unwrap()).abs() <= 1e-12);
        prop_assert!((infonce_loss(&s, tau).unwrap() - infonce_loss(&t, tau).unwrap()).abs() <= 1e-12);
    }

    /// Relabelling the batch (P S Pᵀ) keeps every positive on the diagonal.
    #[test]
    fn losses_ignore_batch_order(rows in matrix(), shift in 0usize..9, tau in 0.05f64..1.0) {
        let n = rows.len();
        let p: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| rows[p[i]][p[j]]).collect()).collect();
        let (a, b) = (SquareMatrix::from_rows(&rows).unwrap(), SquareMatrix::from_rows(&permuted).unwrap());
        prop_assert!((bce_loss(&a, 10.0, -5.0, 2.0).unwrap() - bce_loss(&b, 10.0, -5.0, 2.0).unwrap()).abs() <= 1e-12);
        prop_assert!((infonce_loss(&a, tau).unwrap() - infonce_loss(&b, tau).unwrap()).abs() <= 1e-12);
    }

    /// Raising every off-diagonal similarity cannot lower either loss.
    #[test]
    fn losses_grow_with_negative_similarity(rows in matrix(), bump in 0.0f64..0.5, tau in 0.05f64..1.0) {
        let n = rows.len();
        let bumped: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| rows[i][j] + if i == j { 0.0 } else { bump }).collect())
            .collect();
        let (a, b) = (SquareMatrix::from_rows(&rows).unwrap(), SquareMatrix::from_rows(&bumped).unwrap());
        prop_assert!(bce_loss(&b, 10.0, -5.0, 2.0).unwrap() >= bce_loss(&a, 10.0, -5.0, 2.0).unwrap() - 1e-12);
        prop_assert!(infonce_loss(&b, tau).unwrap() >= infonce_loss(&a, tau).unwrap() - 1e-12);
    }
}

/// `fuse_grad` against central differences of `<u, fuse(t, i)>` for text,
/// image and parameter gradients, 100 seeds per fusion mode.
#[test]
fn fuse_grad_matches_finite_differences() {
    const H: f64 = 1e-6;
    for mode in [FusionMode::WeightedSum, FusionMode::Mlp] {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.gen_range(1..=12);
            let mut params = match mode {
                FusionMode::WeightedSum => FusionParams::<f64>::weighted_sum(),
                FusionMode::Mlp => {
                    let mut head = MlpHead::init(d, rng.gen_range(1..=10), &mut rng);
                    head.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
                    FusionParams::mlp(head)
                }
            };
            params.alpha_raw = rng.gen_range(-3.0..3.0);
            let mut draw = |n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (t, i, u) = (draw(d), draw(d), draw(d));
            let g = fuse_grad(&t, &i, &params, &u).unwrap();
            let f = |t: &[f64], i: &[f64], p: &FusionParams<f64>| -> f64 {
                fuse(t, i, p).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let close = |a: f64, n: f64| (a - n).abs() <= 1e-6 * (1.0 + a.abs().max(n.abs()));
            for k in 0..d {
                let (mut tp, mut tm) = (t.clone(), t.clone());
                tp[k] += H;
                tm[k] -= H;
                let num = (f(&tp, &i, &params) - f(&tm, &i, &params)) / (2.0 * H);
                // A relu kink inside the stencil makes the difference one-sided.
                let kink = (f(&tp, &i, &params) - 2.0 * f(&t, &i, &params) + f(&tm, &i, &params)).abs() > 1e-9;
                assert!(kink || close(g.text[k], num), "{mode} seed {seed} text[{k}]: {} vs {num}", g.text[k]);
                let (mut ip, mut im) = (i.clone(), i.clone());
                ip[k] += H;
                im[k] -= H;
                let num = (f(&t, &ip, &params) - f(&t, &im, &params)) / (2.0 * H);
                assert!(kink || close(g.img[k], num), "{mode} seed {seed} img[{k}]");
            }
            let flat = params.to_flat();
            let mut probe = params.clone();
            for k in 0..flat.len() {
                let mut at = |x: f64| {
                    let mut fl = flat.clone();
                    fl[k] = x;
                    probe.set_flat(&fl).unwrap();
                    f(&t, &i, &probe)
                };
                let (fp, f0, fm) = (at(flat[k] + H), at(flat[k]), at(flat[k] - H));
                let kink = (fp - 2.0 * f0 + fm).abs() > 1e-9;
                let num = (fp - fm) / (2.0 * H);
                assert!(kink || close(g.params[k], num), "{mode} seed {seed} param[{k}]: {} vs {num}", g.params[k]);
            }
            if mode == FusionMode::WeightedSum {
                let a = params.alpha();
                let num = (f(&t, &i, &params.clone().with_alpha(a + H)) - f(&t, &i, &params.clone().with_alpha(a - H)))
                    / (2.0 * H);
                assert!(close(g.alpha, num), "seed {seed} alpha");
            }
        }
    }
}
