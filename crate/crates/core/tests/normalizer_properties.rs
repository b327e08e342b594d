use choicenet::{Tape, Tensor};
use proptest::prelude::*;

fn rows() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..6, 1usize..5).prop_flat_map(|(c, n)| (Just(c), prop::collection::vec(-50.0f64..50.0, c * n)))
}

fn eval(x: &Tensor, f: impl Fn(&mut Tape, choicenet::Var) -> choicenet::Result<choicenet::Var>) -> Tensor {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let out = f(&mut t, v).unwrap();
    t.value(out).clone()
}

proptest! {
    #[test]
    fn softmax_rows_are_simplex_points((c, data) in rows()) {
        let x = Tensor::new(vec![data.len() / c, c], data).unwrap();
        let p = eval(&x, |t, v| t.softmax(v));
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts((c, data) in rows(), shift in -1e3f64..1e3) {
        let x = Tensor::new(vec![data.len() / c, c], data).unwrap();
        let a = eval(&x, |t, v| t.softmax(v));
        let b = eval(&x.map(|v| v + shift), |t, v| t.softmax(v));
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn logsumexp_is_bracketed_by_max((c, data) in rows()) {
        let x = Tensor::new(vec![data.len() / c, c], data).unwrap();
        let l = eval(&x, |t, v| t.logsumexp(v));
        prop_assert_eq!(l.shape(), &[x.rows()][..]);
        for i in 0..x.rows() {
            let m = x.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(l.data()[i] >= m - 1e-12);
            prop_assert!(l.data()[i] <= m + (c as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn log_softmax_identity((c, data) in rows()) {
        let x = Tensor::new(vec![data.len() / c, c], data).unwrap();
        let p = eval(&x, |t, v| t.softmax(v));
        let l = eval(&x, |t, v| t.logsumexp(v));
        for i in 0..x.rows() {
            for j in 0..c {
                let lp = x.get2(i, j) - l.data()[i];
                prop_assert!((p.get2(i, j).ln() - lp).abs() < 1e-9 || p.get2(i, j) == 0.0);
            }
        }
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let x = Tensor::from_rows(&[vec![1e300, 0.0, -1e300], vec![-800.0, -801.0, -802.0]]).unwrap();
    let p = eval(&x, |t, v| t.softmax(v));
    let l = eval(&x, |t, v| t.logsumexp(v));
    assert!(p.all_finite() && l.all_finite());
    assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
    assert!((l.data()[1] - (-800.0 + (1.0 + (-1.0f64).exp() + (-2.0f64).exp()).ln())).abs() < 1e-12);
}
