use hybridnas::distill::{
    dct2, freq_loss, freq_loss_masked, idct2, pseudo_loss, spatial_loss, suppress_dc, total_loss, LossComponents, LossWeights,
    TokenGrid,
};
use hybridnas::tensor::Matrix;
use hybridnas::Error;
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(-2.0f64..2.0, h * w).prop_map(move |v| Matrix::from_vec(h, w, v))
    })
}

fn grids() -> impl Strategy<Value = (TokenGrid, TokenGrid)> {
    (2usize..6, 2usize..6, 1usize..4).prop_flat_map(|(h, w, c)| {
        let n = h * w * c;
        (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n)).prop_map(move |(a, b)| {
            (
                TokenGrid::new(Matrix::from_vec(h * w, c, a), h, w).unwrap(),
                TokenGrid::new(Matrix::from_vec(h * w, c, b), h, w).unwrap(),
            )
        })
    })
}

proptest! {
    #[test]
    fn dct_is_linear(x in matrix(8), a in -3.0f64..3.0) {
        let y = Matrix::from_fn(x.rows(), x.cols(), |i, j| (i as f64 - j as f64).sin());
        let lhs = dct2(&Matrix::from_fn(x.rows(), x.cols(), |i, j| a * x.get(i, j) + y.get(i, j)));
        let (dx, dy) = (dct2(&x), dct2(&y));
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                prop_assert!((lhs.get(i, j) - (a * dx.get(i, j) + dy.get(i, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_round_trips_and_preserves_energy(x in matrix(12)) {
        let y = dct2(&x);
        let back = idct2(&y);
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (ex, ey) = (x.frobenius_norm().powi(2), y.frobenius_norm().powi(2));
        prop_assert!((ex - ey).abs() <= 1e-10 * ex.max(1e-300));
    }

    #[test]
    fn dc_coefficient_is_scaled_mean(x in matrix(10)) {
        let y = dct2(&x);
        let n = (x.rows() * x.cols()) as f64;
        prop_assert!((y.get(0, 0) - x.mean() * n.sqrt()).abs() < 1e-12);
        let s = suppress_dc(&y);
        prop_assert_eq!(s.get(0, 0), 0.0);
        prop_assert!(idct2(&s).mean().abs() < 1e-12);
    }

    #[test]
    fn losses_are_symmetric_and_vanish_on_equality((a, b) in grids()) {
        prop_assert!((freq_loss(&a, &b).unwrap() - freq_loss(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!((spatial_loss(&a, &b).unwrap() - spatial_loss(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(freq_loss(&a, &a).unwrap().abs() < 1e-24);
        prop_assert_eq!(spatial_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(pseudo_loss(&a.tokens, &a.tokens).unwrap(), 0.0);
    }

    #[test]
    fn frequency_loss_is_bounded_by_spatial((a, b) in grids(), r in 0.0f64..4.0) {
        // orthonormality: the DC-free spectrum error never exceeds the full spatial error
        let f = freq_loss(&a, &b).unwrap();
        prop_assert!(f <= spatial_loss(&a, &b).unwrap() + 1e-12);
        prop_assert!(freq_loss_masked(&a, &b, Some(r)).unwrap() <= f + 1e-12);
    }

    #[test]
    fn total_loss_is_affine(gt in 0.0f64..2.0, pseudo in 0.0f64..2.0, spat in 0.0f64..2.0, freq in 0.0f64..2.0, theta in 0.0f64..=1.0) {
        let w = LossWeights { theta, alpha1: 0.5, alpha2: 2.0 };
        let c = LossComponents { gt, pseudo, spat, freq };
        let expect = (1.0 - theta) * gt + theta * pseudo + 0.5 * spat + 2.0 * freq;
        prop_assert!((total_loss(&c, &w).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn shape_errors() {
    let a = TokenGrid::new(Matrix::zeros(4, 2), 2, 2).unwrap();
    let b = TokenGrid::new(Matrix::zeros(6, 2), 2, 3).unwrap();
    assert!(matches!(freq_loss(&a, &b), Err(Error::Shape(_))));
    assert!(matches!(freq_loss(&a, &TokenGrid::unshaped(Matrix::zeros(4, 2))), Err(Error::MissingShape)));
    assert!(TokenGrid::new(Matrix::zeros(5, 2), 2, 2).is_err());
    let bad = LossWeights {
        theta: 1.5,
        ..LossWeights::default()
    };
    assert!(matches!(total_loss(&LossComponents::default(), &bad), Err(Error::InvalidWeights(_))));
}
