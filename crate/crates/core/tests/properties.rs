use hipan_core::hierarchy::{
    decode_code, encode_leaf, gen_synthetic, lca_depth, select_prime, SyntheticKind,
};
use hipan_core::metrics::{
    ball_entropy_profile, box_count_dimension, calibration_from_pairs, digit_entropy_profile,
    spearman_ultrametric, triangle_violation_count, TriangleOptions,
};
use hipan_core::model::{HipanModel, ModelConfig};
use hipan_core::padic::{inv_pow, ultrametric_distance, valuation};
use hipan_core::vapo::{
    gist_step, head_loss_and_grad, project_digit, wrap_distance, CoordinateObjective,
};
use hipan_core::{CodecParams, EncodedDataset, PadicCode};
use proptest::prelude::*;

fn ragged(b: usize, depth: usize, seed: u64) -> hipan_core::TreeSpec {
    gen_synthetic(SyntheticKind::Ragged, b, depth, seed).unwrap()
}

fn code_strategy(p: u32, k: usize) -> impl Strategy<Value = PadicCode> {
    prop::collection::vec(0..p, k)
        .prop_map(move |d| PadicCode::new(CodecParams::new(p, k).unwrap(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trip(b in 1usize..=7, depth in 1usize..=6, seed in any::<u64>()) {
        let tree = ragged(b, depth, seed);
        let data = EncodedDataset::encode(&tree).unwrap();
        prop_assert!(data.is_injective());
        for r in &data.records {
            let path = decode_code(&tree, &r.code).unwrap();
            prop_assert_eq!(*path.last().unwrap(), r.leaf);
        }
    }

    #[test]
    fn distance_is_inverse_power_of_lca_depth(b in 1usize..=5, depth in 1usize..=5, seed in any::<u64>()) {
        let tree = ragged(b, depth, seed);
        let codec = select_prime(&tree);
        let leaves = tree.leaves();
        for (i, &x) in leaves.iter().enumerate() {
            for &y in &leaves[i + 1..] {
                let cx = encode_leaf(&tree, x, codec).unwrap();
                let cy = encode_leaf(&tree, y, codec).unwrap();
                let lca = lca_depth(&tree, x, y).unwrap();
                prop_assert_eq!(ultrametric_distance(&cx, &cy).unwrap(), inv_pow(codec.p, lca));
            }
        }
    }

    #[test]
    fn strong_triangle(x in code_strategy(5, 4), y in code_strategy(5, 4), z in code_strategy(5, 4)) {
        let d = |a: &PadicCode, b: &PadicCode| ultrametric_distance(a, b).unwrap();
        prop_assert!(d(&x, &z) <= d(&x, &y).max(d(&y, &z)));
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert_eq!(valuation(&x, &x).unwrap(), 4);
        let audit = triangle_violation_count(&[x, y, z], TriangleOptions::default());
        prop_assert_eq!(audit.violations, 0);
    }

    #[test]
    fn entropy_profiles(b in 1usize..=6, depth in 1usize..=5, seed in any::<u64>()) {
        let tree = ragged(b, depth, seed);
        let data = EncodedDataset::encode(&tree).unwrap();
        let ball = ball_entropy_profile(&data).unwrap();
        for w in ball.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        let bound = (data.codec.p as f64).log2() + 1e-12;
        for h in digit_entropy_profile(&data).unwrap() {
            prop_assert!((0.0..=bound).contains(&h));
        }
    }

    #[test]
    fn exact_encodings_rank_perfectly(b in 2usize..=4, depth in 2usize..=4, seed in any::<u64>()) {
        let tree = ragged(b, depth, seed);
        let data = EncodedDataset::encode(&tree).unwrap();
        prop_assume!(data.len() >= 3);
        let s = spearman_ultrametric(&data, &tree, 100_000, 0).unwrap();
        if !s.degenerate {
            prop_assert!(s.rho <= -0.99 + 1e-12, "rho = {}", s.rho);
        }
    }

    #[test]
    fn projection_within_half(v in -1e6f64..1e6, p in prop::sample::select(vec![2u32, 3, 5, 409])) {
        let d = project_digit(v, p);
        prop_assert!(d < p);
        prop_assert!(wrap_distance(d, v, p) <= 0.5 + 1e-9);
    }

    #[test]
    fn calibration_zero_when_bins_match(k in 1usize..20) {
        // Confidence 0.5 with exactly half correct, plus perfect certain picks.
        let mut s: Vec<(f64, bool)> = (0..2 * k).map(|i| (0.5, i % 2 == 0)).collect();
        let before = calibration_from_pairs(&s, 15).unwrap().ece;
        prop_assert!(before.abs() < 1e-12);
        s.extend(std::iter::repeat_n((1.0, true), k));
        prop_assert!(calibration_from_pairs(&s, 15).unwrap().ece <= before + 1e-12);
    }
}

#[test]
fn complete_tree_box_count_slope() {
    for (b, depth) in [(2usize, 6usize), (3, 4), (4, 3)] {
        let tree = gen_synthetic(SyntheticKind::Complete, b, depth, 0).unwrap();
        for p in [5u32, 7, 11] {
            let data =
                EncodedDataset::with_codec(&tree, CodecParams::new(p, depth).unwrap()).unwrap();
            let fit = box_count_dimension(&data);
            let expected = (b as f64).ln() / (p as f64).ln();
            assert!((fit.d0.unwrap() - expected).abs() < 1e-9, "b={b} p={p}");
        }
    }
}

struct Lattice {
    p: u32,
    digits: Vec<f64>,
    table: Vec<f64>,
}

impl Lattice {
    fn full_loss(&self) -> f64 {
        let idx = self
            .digits
            .iter()
            .fold(0usize, |acc, &d| acc * self.p as usize + d as usize);
        self.table[idx]
    }
}

impl CoordinateObjective for Lattice {
    fn modulus(&self) -> u32 {
        self.p
    }
    fn get(&self, c: usize) -> f64 {
        self.digits[c]
    }
    fn set(&mut self, c: usize, v: f64) {
        self.digits[c] = v;
    }
    fn local_loss(&mut self, _: usize) -> f64 {
        self.full_loss()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gist_moves_never_increase_loss(seed in any::<u64>(), p in prop::sample::select(vec![2u32, 3, 5]), k in 1usize..=3) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = (p as usize).pow(k as u32);
        let table: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let digits = (0..k).map(|_| rng.random_range(0..p) as f64).collect();
        let mut lat = Lattice { p, digits, table };
        let mut prev = lat.full_loss();
        for _ in 0..10 {
            for c in 0..k {
                let step = gist_step(&mut lat, c).unwrap();
                let now = lat.full_loss();
                prop_assert!(now <= prev);
                prop_assert_eq!(step.accepted, now < prev);
                prop_assert_eq!(step.evaluations, if p == 2 { 2 } else { 3 });
                prev = now;
            }
        }
    }

    #[test]
    fn head_loss_depends_only_on_true_prefix_and_own_head(seed in 0u64..1000, r in 0usize..27) {
        let tree = gen_synthetic(SyntheticKind::Complete, 3, 3, 0).unwrap();
        let data = EncodedDataset::encode(&tree).unwrap();
        let model = HipanModel::new(ModelConfig::new(data.codec), seed).unwrap();
        let digits = data.records[r].code.digits();
        let p = model.p() as usize;
        let mut scratch = vec![0.0; p];
        for k in 0..model.k() {
            let head = model.head_for_digit(k);
            let base = head_loss_and_grad(&model, digits, k, 1.0, None, &mut scratch);
            let mut grad = vec![0.0; model.params().len()];
            head_loss_and_grad(&model, digits, k, 1.0, Some((&mut grad, 1.0)), &mut scratch);
            let own = model.head_range(head);
            for (i, g) in grad.iter().enumerate() {
                if !own.contains(&i) {
                    prop_assert_eq!(*g, 0.0);
                }
            }
            // Perturb every other head.
            let mut other = model.params().to_vec();
            for (i, v) in other.iter_mut().enumerate() {
                if !own.contains(&i) {
                    *v += 1.5;
                }
            }
            let m2 = HipanModel::from_params(*model.config(), other).unwrap();
            prop_assert_eq!(head_loss_and_grad(&m2, digits, k, 1.0, None, &mut scratch), base);
            // Rows of other parent digits do not matter either.
            if k > 0 {
                let mut rows = model.params().to_vec();
                for alt in 0..p as u32 {
                    if alt != digits[k - 1] {
                        for j in 0..p as u32 {
                            rows[model.entry_index(head, alt, j)] += 0.7;
                        }
                    }
                }
                let m3 = HipanModel::from_params(*model.config(), rows).unwrap();
                prop_assert_eq!(head_loss_and_grad(&m3, digits, k, 1.0, None, &mut scratch), base);
            }
        }
    }

    #[test]
    fn head_gradient_matches_finite_differences(seed in 0u64..1000, r in 0usize..27) {
        let tree = gen_synthetic(SyntheticKind::Complete, 3, 3, 0).unwrap();
        let data = EncodedDataset::encode(&tree).unwrap();
        let model = HipanModel::new(ModelConfig::new(data.codec), seed).unwrap();
        let digits = data.records[r].code.digits();
        let mut scratch = vec![0.0; model.p() as usize];
        let h = 1e-6;
        for k in 0..model.k() {
            let mut grad = vec![0.0; model.params().len()];
            head_loss_and_grad(&model, digits, k, 0.8, Some((&mut grad, 1.0)), &mut scratch);
            for i in model.head_range(model.head_for_digit(k)) {
                let mut up = model.params().to_vec();
                up[i] += h;
                let mut dn = model.params().to_vec();
                dn[i] -= h;
                let lu = head_loss_and_grad(&HipanModel::from_params(*model.config(), up).unwrap(), digits, k, 0.8, None, &mut scratch);
                let ld = head_loss_and_grad(&HipanModel::from_params(*model.config(), dn).unwrap(), digits, k, 0.8, None, &mut scratch);
                let fd = (lu - ld) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()), "k={} i={} fd={} an={}", k, i, fd, grad[i]);
            }
        }
    }
}
