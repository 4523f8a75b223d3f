//! Monte-Carlo unbiasedness of every sketch on a single linear layer, in both
//! sampling modes where they apply.

use vjpsketch::rng::stream;
use vjpsketch::sketch::{apply_sketched_backward, exact_backward};
use vjpsketch::stats::MatrixStats;
use vjpsketch::{Budget, DenseMatrix, SketchKind, SketchOperatorSpec};

use rand::Rng;

const DRAWS: usize = 20_000;

fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = stream(seed, 7, 0);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn every_kind_is_unbiased_on_a_linear_layer() {
    // d_in = 5 covers rank(Γ) ≤ B = 4, so every active direction of G carries weight
    let (b, d_in, d_out) = (4, 5, 6);
    let x = random(b, d_in, 1);
    let w = random(d_out, d_in, 2);
    let g = random(b, d_out, 3);
    let exact = exact_backward(&x, &w, &g, true);
    let exact_dx = exact.dx.unwrap();
    let exact_db = DenseMatrix::new(d_out, 1, exact.db.to_vec()).unwrap();
    let mut rng = stream(4, 0, 0);
    for kind in SketchKind::ALL {
        for correlated in [true, false] {
            for budget in [Budget::Fraction(0.3), Budget::Count(2)] {
                let spec = SketchOperatorSpec::new(kind, budget).with_correlated(correlated);
                if spec.validate().is_err() {
                    continue;
                }
                let (mut dx, mut dw, mut db) =
                    (MatrixStats::new(b, d_in), MatrixStats::new(d_out, d_in), MatrixStats::new(d_out, 1));
                for _ in 0..DRAWS {
                    let r = apply_sketched_backward(&spec, &x, &w, &g, &mut rng).unwrap();
                    dx.push(r.dx.as_ref().unwrap());
                    dw.push(&r.dw);
                    db.push(&DenseMatrix::new(d_out, 1, r.db.to_vec()).unwrap());
                }
                for (name, stats, target) in [("dX", &dx, &exact_dx), ("dW", &dw, &exact.dw), ("db", &db, &exact_db)] {
                    let check = stats.band_check(target, 4.0);
                    assert!(check.passed(), "{} {budget:?} {name}: {check:?}", spec.label());
                }
            }
        }
    }
}
