use cone_mosaic::density::{cone_density, mean_cone_area, window_area};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn close(got: f64, exact: BigRational) -> bool {
    (rat(got) - &exact).abs() <= exact.abs() * rat(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn density_matches_exact_rational(
        n in 0u64..5_000_000,
        w in 1usize..8192,
        h in 1usize..8192,
        mu in 0.01f64..20.0,
        sf in 1.0f64..1e5,
    ) {
        let got = cone_density(n, w, h, mu, sf).unwrap();
        let exact = int(n) * rat(sf) * rat(sf) / (int((w * h) as u64) * rat(mu) * rat(mu));
        if n == 0 {
            prop_assert_eq!(got, 0.0);
        } else {
            prop_assert!(close(got, exact));
        }
    }

    #[test]
    fn mean_area_matches_exact_rational(counts in prop::collection::vec(1u64..100_000, 1..200), mu in 0.01f64..20.0) {
        let got = mean_cone_area(&counts, mu).unwrap();
        let sum = counts.iter().fold(int(0), |acc, &c| acc + int(c));
        let exact = sum * rat(mu) * rat(mu) / int(counts.len() as u64);
        prop_assert!(close(got, exact));
    }

    #[test]
    fn density_times_window_is_count(n in 1u64..100_000, w in 1usize..2048, h in 1usize..2048, mu in 0.05f64..5.0) {
        let d = cone_density(n, w, h, mu, 1000.0).unwrap();
        let area_mm2 = window_area(w, h, mu, 1000.0);
        prop_assert!((d * area_mm2 - n as f64).abs() <= 1e-12 * n as f64);
    }
}

#[test]
fn worked_example() {
    assert_eq!(cone_density(100, 100, 100, 1.0, 1000.0).unwrap(), 10000.0);
    assert_eq!(mean_cone_area(&[25], 1.0).unwrap(), 25.0);
}
