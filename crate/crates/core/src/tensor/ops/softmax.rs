use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

impl<T: Float> Tape<T> {
    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_lastdim(&self, x: &Var<T>) -> Result<Var<T>> {
        let d = *x.shape().last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut out = Vec::with_capacity(x.value().numel());
        for row in x.data().chunks_exact(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            out.extend(row.iter().map(|&v| (v - m).exp()));
            let z: T = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|v| *v /= z);
        }
        let y = std::sync::Arc::new(Tensor::from_parts(x.shape().to_vec(), out));
        let yv = std::sync::Arc::clone(&y);
        Ok(self.record(
            "softmax",
            &[x],
            (*y).clone(),
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(d).zip(yv.data().chunks_exact(d)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn softmax(v: &[f64]) -> Vec<f64> {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_f64(&[1, v.len()], v).unwrap());
        tape.softmax_lastdim(&x).unwrap().data().to_vec()
    }

    #[test]
    fn uniform_row() {
        for p in softmax(&[2.0; 5]) {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_three() {
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..16)) {
            let s: f64 = softmax(&v).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..8), c in -30.0f64..30.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for (a, b) in softmax(&v).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
