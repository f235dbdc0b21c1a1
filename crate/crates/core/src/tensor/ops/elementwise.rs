use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape<T: Float>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Float> Tape<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.record(
            "add",
            &[a, b],
            out,
            Box::new(|g, needs| {
                needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
            }),
        ))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let (av, bv) = (a.arc(), b.arc());
        Ok(self.record(
            "mul",
            &[a, b],
            out,
            Box::new(move |g, needs| {
                let ga = needs[0]
                    .then(|| g.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect());
                let gb = needs[1]
                    .then(|| g.iter().zip(av.data()).map(|(&g, &x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, a: &Var<T>, k: f64) -> Var<T> {
        let k = T::c(k);
        let out = a.value().map(|v| v * k);
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * k).collect())]),
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, a: &Var<T>) -> Var<T> {
        let s: T = a.data().iter().copied().sum();
        let n = a.value().numel();
        self.record(
            "sum",
            &[a],
            Tensor::scalar(s),
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self, a: &Var<T>) -> Var<T> {
        let n = a.value().numel();
        let s: T = a.data().iter().copied().sum();
        let inv = T::one() / T::c(n as f64);
        self.record(
            "mean",
            &[a],
            Tensor::scalar(s * inv),
            Box::new(move |g, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(|x| x * sigmoid(x));
        let av = a.arc();
        self.record(
            "silu",
            &[a],
            out,
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(av.data())
                    .map(|(&g, &x)| {
                        let s = sigmoid(x);
                        g * s * (T::one() + x * (T::one() - s))
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn sigmoid(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(sigmoid);
        let yv = std::sync::Arc::new(out.clone());
        self.record(
            "sigmoid",
            &[a],
            out,
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(yv.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }
}
