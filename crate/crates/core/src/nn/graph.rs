//! Layer graphs.
//!
//! Architectures are trees built from four node kinds: a single layer, a
//! sequence, a residual wrapper (`x + body(x)`), and a frequency split that
//! runs two branches on the two halves of the last (frequency) axis and
//! concatenates their outputs. Training forwards are `&mut` because layers
//! cache activations; eval forwards are `&self` and pure.

use crate::error::Error;
use crate::nn::layers::Layer;
use crate::nn::tensor::Tensor;
use crate::rng::DetRng;
use crate::Result;

#[derive(Debug, Clone)]
pub enum Graph {
    Layer(Layer),
    Seq(Vec<Graph>),
    /// `y = x + body(x)`; the body must preserve shape.
    Residual(Box<Graph>),
    /// Split the last axis at `w/2`, run `lo` on the first half and `hi` on
    /// the second, concatenate the outputs along the last axis.
    SplitFreq { lo: Box<Graph>, hi: Box<Graph> },
}

/// Splits a 4-D tensor along W at `w/2`.
fn split_w(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4();
    if w < 2 {
        return Err(Error::ShapeMismatch {
            context: "split requires frequency width >= 2".into(),
            expected: vec![n, c, h, 2],
            got: x.shape.clone(),
        });
    }
    let wl = w / 2;
    let wh = w - wl;
    let mut lo = Tensor::zeros(&[n, c, h, wl]);
    let mut hi = Tensor::zeros(&[n, c, h, wh]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = ((ni * c + ci) * h + y) * w;
                let dl = ((ni * c + ci) * h + y) * wl;
                let dh = ((ni * c + ci) * h + y) * wh;
                lo.data[dl..dl + wl].copy_from_slice(&x.data[src..src + wl]);
                hi.data[dh..dh + wh].copy_from_slice(&x.data[src + wl..src + w]);
            }
        }
    }
    Ok((lo, hi))
}

/// Concatenates two 4-D tensors along W; N, C, H must agree.
fn concat_w(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, c, h, wa) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    if (n, c, h) != (nb, cb, hb) {
        return Err(Error::ShapeMismatch {
            context: "concat branch outputs".into(),
            expected: vec![n, c, h, wb],
            got: b.shape.clone(),
        });
    }
    let w = wa + wb;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let dst = ((ni * c + ci) * h + y) * w;
                let sa = ((ni * c + ci) * h + y) * wa;
                let sb = ((ni * c + ci) * h + y) * wb;
                out.data[dst..dst + wa].copy_from_slice(&a.data[sa..sa + wa]);
                out.data[dst + wa..dst + w].copy_from_slice(&b.data[sb..sb + wb]);
            }
        }
    }
    Ok(out)
}

impl Graph {
    pub fn seq(items: Vec<Graph>) -> Graph {
        Graph::Seq(items)
    }

    pub fn layer(l: Layer) -> Graph {
        Graph::Layer(l)
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut DetRng) -> Result<Tensor> {
        match self {
            Graph::Layer(l) => l.forward_train(x, rng),
            Graph::Seq(items) => {
                let mut cur = x.clone();
                for g in items.iter_mut() {
                    cur = g.forward_train(&cur, rng)?;
                }
                Ok(cur)
            }
            Graph::Residual(body) => {
                let branch = body.forward_train(x, rng)?;
                if branch.shape != x.shape {
                    return Err(Error::ShapeMismatch {
                        context: "residual body must preserve shape".into(),
                        expected: x.shape.clone(),
                        got: branch.shape,
                    });
                }
                let mut out = branch;
                for (o, &xv) in out.data.iter_mut().zip(&x.data) {
                    *o += xv;
                }
                Ok(out)
            }
            Graph::SplitFreq { lo, hi } => {
                let (xl, xh) = split_w(x)?;
                let yl = lo.forward_train(&xl, rng)?;
                let yh = hi.forward_train(&xh, rng)?;
                concat_w(&yl, &yh)
            }
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Graph::Layer(l) => l.forward_eval(x),
            Graph::Seq(items) => {
                let mut cur = x.clone();
                for g in items {
                    cur = g.forward_eval(&cur)?;
                }
                Ok(cur)
            }
            Graph::Residual(body) => {
                let branch = body.forward_eval(x)?;
                if branch.shape != x.shape {
                    return Err(Error::ShapeMismatch {
                        context: "residual body must preserve shape".into(),
                        expected: x.shape.clone(),
                        got: branch.shape,
                    });
                }
                let mut out = branch;
                for (o, &xv) in out.data.iter_mut().zip(&x.data) {
                    *o += xv;
                }
                Ok(out)
            }
            Graph::SplitFreq { lo, hi } => {
                let (xl, xh) = split_w(x)?;
                concat_w(&lo.forward_eval(&xl)?, &hi.forward_eval(&xh)?)
            }
        }
    }

    /// Backpropagates through the graph; layers must have cached a training
    /// forward. Returns the gradient at the graph input.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Graph::Layer(l) => l.backward(dy),
            Graph::Seq(items) => {
                let mut cur = dy.clone();
                for g in items.iter_mut().rev() {
                    cur = g.backward(&cur)?;
                }
                Ok(cur)
            }
            Graph::Residual(body) => {
                // d/dx (x + f(x)) = dy + f'(x)·dy: the adder passes the
                // upstream gradient unchanged to both branches.
                let through = body.backward(dy)?;
                let mut dx = through;
                for (d, &g) in dx.data.iter_mut().zip(&dy.data) {
                    *d += g;
                }
                Ok(dx)
            }
            Graph::SplitFreq { lo, hi } => {
                // Branches preserve W (split architectures never subsample
                // frequency), so the output concatenation boundary equals
                // the input split point.
                let w = dy.shape[3];
                let (dl, dh) = split_at_w(dy, w / 2, w - w / 2)?;
                let gl = lo.backward(&dl)?;
                let gh = hi.backward(&dh)?;
                concat_w(&gl, &gh)
            }
        }
    }

    /// Visits every layer in deterministic traversal order.
    pub fn visit_layers<'a>(&'a self, f: &mut dyn FnMut(&'a Layer)) {
        match self {
            Graph::Layer(l) => f(l),
            Graph::Seq(items) => items.iter().for_each(|g| g.visit_layers(f)),
            Graph::Residual(body) => body.visit_layers(f),
            Graph::SplitFreq { lo, hi } => {
                lo.visit_layers(f);
                hi.visit_layers(f);
            }
        }
    }

    pub fn visit_layers_mut(&mut self, f: &mut dyn FnMut(&mut Layer)) {
        match self {
            Graph::Layer(l) => f(l),
            Graph::Seq(items) => items.iter_mut().for_each(|g| g.visit_layers_mut(f)),
            Graph::Residual(body) => body.visit_layers_mut(f),
            Graph::SplitFreq { lo, hi } => {
                lo.visit_layers_mut(f);
                hi.visit_layers_mut(f);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_layers_mut(&mut |l| l.zero_grads());
    }

    /// Number of conv2d layers in the graph.
    pub fn conv_count(&self) -> usize {
        let mut n = 0;
        self.visit_layers(&mut |l| {
            if matches!(l, Layer::Conv2d(_)) {
                n += 1;
            }
        });
        n
    }

    /// Number of operations that shrink the frequency (W) axis.
    pub fn freq_downsamples(&self) -> usize {
        let mut n = 0;
        self.visit_layers(&mut |l| {
            if let Layer::MaxPool(p) = l {
                if p.pw > 1 {
                    n += 1;
                }
            }
        });
        n
    }

    /// Pool windows (ph, pw) in traversal order.
    pub fn pool_windows(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        self.visit_layers(&mut |l| {
            if let Layer::MaxPool(p) = l {
                v.push((p.ph, p.pw));
            }
        });
        v
    }

    /// If the graph routes its input through a frequency split, the widths
    /// the two branches would receive for an `input_w`-wide input.
    pub fn split_branch_widths(&self, input_w: usize) -> Option<(usize, usize)> {
        match self {
            Graph::SplitFreq { .. } => Some((input_w / 2, input_w - input_w / 2)),
            Graph::Seq(items) => items.iter().find_map(|g| g.split_branch_widths(input_w)),
            Graph::Residual(body) => body.split_branch_widths(input_w),
            Graph::Layer(_) => None,
        }
    }

    /// Structural description used in checkpoint headers, e.g.
    /// `seq{conv2d(in=3,out=8,kh=3,kw=3) relu split{...}{...}}`.
    pub fn describe(&self) -> String {
        match self {
            Graph::Layer(l) => l.describe(),
            Graph::Seq(items) => {
                let inner: Vec<String> = items.iter().map(|g| g.describe()).collect();
                format!("seq{{{}}}", inner.join(" "))
            }
            Graph::Residual(body) => format!("residual{{{}}}", body.describe()),
            Graph::SplitFreq { lo, hi } => {
                format!("split{{{}}}{{{}}}", lo.describe(), hi.describe())
            }
        }
    }
}

/// Splits dy (N,C,H,wl+wh) into its two W segments.
fn split_at_w(x: &Tensor, wl: usize, wh: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4();
    if wl + wh != w {
        return Err(Error::ShapeMismatch {
            context: "split widths".into(),
            expected: vec![wl + wh],
            got: vec![w],
        });
    }
    let mut lo = Tensor::zeros(&[n, c, h, wl]);
    let mut hi = Tensor::zeros(&[n, c, h, wh]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = ((ni * c + ci) * h + y) * w;
                let dl = ((ni * c + ci) * h + y) * wl;
                let dh = ((ni * c + ci) * h + y) * wh;
                lo.data[dl..dl + wl].copy_from_slice(&x.data[src..src + wl]);
                hi.data[dh..dh + wh].copy_from_slice(&x.data[src + wl..src + w]);
            }
        }
    }
    Ok((lo, hi))
}
