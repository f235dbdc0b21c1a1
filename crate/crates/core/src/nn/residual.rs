use super::layers::{group_count, Conv2d, Ctx, Norm, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Float, Var};

/// Pre-activation residual block:
/// `conv2(silu(gn2(conv1(silu(gn1(x)))))) + skip(x)`, where `skip` is the
/// identity when the channel count is unchanged and a 1×1 conv otherwise.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub cin: usize,
    pub cout: usize,
    gn1: Norm,
    conv1: Conv2d,
    gn2: Norm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(prefix: &str, cin: usize, cout: usize) -> Self {
        ResidualBlock {
            cin,
            cout,
            gn1: Norm::new(format!("{prefix}.gn1"), cin),
            conv1: Conv2d::same(format!("{prefix}.conv1"), cin, cout, 3),
            gn2: Norm::new(format!("{prefix}.gn2"), cout),
            conv2: Conv2d::same(format!("{prefix}.conv2"), cout, cout, 3),
            skip: (cin != cout).then(|| Conv2d::pointwise(format!("{prefix}.skip"), cin, cout)),
        }
    }

    pub fn conv1(&self) -> &Conv2d {
        &self.conv1
    }

    pub fn conv2(&self) -> &Conv2d {
        &self.conv2
    }

    pub fn skip(&self) -> Option<&Conv2d> {
        self.skip.as_ref()
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.gn1.init(pi);
        self.conv1.init(pi);
        self.gn2.init(pi);
        self.conv2.init(pi);
        if let Some(s) = &self.skip {
            s.init(pi);
        }
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().len() != 4 || x.shape()[1] != self.cin {
            return Err(Error::shape(
                "residual_block",
                format!("expected [N, {}, H, W], got {:?}", self.cin, x.shape()),
            ));
        }
        for c in [self.cin, self.cout] {
            if c % group_count(c) != 0 {
                return Err(Error::shape("residual_block", format!("{c} channels not group-divisible")));
            }
        }
        let t = cx.tape;
        let h = self.gn1.group(cx, x)?;
        let h = self.conv1.forward(cx, &t.silu(&h))?;
        let h = self.gn2.group(cx, &h)?;
        let h = self.conv2.forward(cx, &t.silu(&h))?;
        let skip = match &self.skip {
            Some(s) => s.forward(cx, x)?,
            None => x.clone(),
        };
        t.add(&h, &skip)
    }
}
