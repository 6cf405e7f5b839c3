mod common;

use common::*;
use jointtag::network::{model_forward, ModelDims};
use rand::Rng;

#[test]
fn full_forward_matches_straight_loop_oracle() {
    for seed in 0..25 {
        let mut r = rng(1000 + seed);
        let hidden = r.gen_range(1..=4);
        let vocab = r.gen_range(2..=6);
        let m = random_model(&mut r, ModelDims::new(vocab, hidden, 2), 1.0);
        let ids: Vec<usize> = (0..3).map(|_| r.gen_range(0..vocab)).collect();
        let got = model_forward(&m, &ids).unwrap().probs;
        let want = ref_probs(&Shadow::of(&m), &ids);
        for t in 0..3 {
            for c in 0..16 {
                let d = (f64::from(got.get(t, c)) - want[t][c]).abs();
                assert!(d < 1e-5, "seed {seed} t {t} c {c}: {d}");
            }
        }
    }
}

#[test]
fn lstm_cell_matches_scalar_oracle() {
    let worst = cell_oracle_max_diff(77, 100);
    assert!(worst < 1e-6, "{worst}");
}
