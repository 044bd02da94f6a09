use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{DenseTensor, Parameter, ParameterSet};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Square 2-D convolution geometry. Padding is `kernel / 2`, which keeps
/// spatial size at stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::invalid(format!(
                "kernel must be 1 or 3, got {}",
                self.kernel
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::invalid(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.padding != self.kernel / 2 {
            return Err(Error::invalid("padding must be kernel / 2"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn output_extent(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn check(&self, x: &DenseTensor, w: &DenseTensor) -> Result<(usize, usize, usize, usize)> {
        self.validate()?;
        let (n, c, h, wd) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::shape(
                "conv input channels (axis 1)",
                self.in_channels,
                c,
            ));
        }
        let ws = self.weight_shape();
        for (axis, (&e, &f)) in ws.iter().zip(w.shape()).enumerate() {
            if e != f {
                return Err(Error::shape(format!("conv weight axis {axis}"), e, f));
            }
        }
        if w.rank() != 4 {
            return Err(Error::shape("conv weight rank", 4, w.rank()));
        }
        if h == 0 || wd == 0 {
            return Err(Error::invalid("conv input has an empty spatial axis"));
        }
        Ok((n, c, h, wd))
    }
}

/// Unfolds one sample `[c, h, w]` into `[c*k*k, oh*ow]`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, spec: &ConvSpec, cols: &mut [f64]) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
    let oh = spec.output_extent(h);
    let ow = spec.output_extent(w);
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ky as isize - p;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let xr = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - p;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            xr[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[c*k*k, oh*ow]` back into `[c, h, w]`.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, spec: &ConvSpec, dx: &mut [f64]) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
    let oh = spec.output_extent(h);
    let ow = spec.output_extent(w);
    let plane = oh * ow;
    for ci in 0..c {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dr = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dr[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` `[n, c_in, h, w]` with `w` `[c_out, c_in, k, k]` plus bias.
pub fn conv2d(
    x: &DenseTensor,
    w: &Parameter,
    b: &Parameter,
    spec: &ConvSpec,
) -> Result<DenseTensor> {
    conv2d_raw(x, &w.value, &b.value, spec)
}

pub(crate) fn conv2d_raw(
    x: &DenseTensor,
    w: &DenseTensor,
    b: &DenseTensor,
    spec: &ConvSpec,
) -> Result<DenseTensor> {
    let (n, c, h, wd) = spec.check(x, w)?;
    if b.len() != spec.out_channels {
        return Err(Error::shape("conv bias length", spec.out_channels, b.len()));
    }
    let (oh, ow) = (spec.output_extent(h), spec.output_extent(wd));
    let plane = oh * ow;
    let kk = c * spec.kernel * spec.kernel;
    let co = spec.out_channels;
    let mut y = DenseTensor::zeros(&[n, co, oh, ow]);
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * plane]
    };
    let in_len = c * h * wd;
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let ys = &mut y.data_mut()[s * co * plane..(s + 1) * co * plane];
        for (o, &bias) in b.data().iter().enumerate() {
            ys[o * plane..(o + 1) * plane].fill(bias);
        }
        let rhs: &[f64] = if spec.is_pointwise() {
            xs
        } else {
            im2col(xs, c, h, wd, spec, &mut cols);
            &cols
        };
        gemm(co, kk, plane, w.data(), false, rhs, false, 1.0, ys);
    }
    Ok(y)
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: DenseTensor,
    pub dw: DenseTensor,
    pub db: DenseTensor,
}

pub fn conv2d_backward(
    x: &DenseTensor,
    w: &DenseTensor,
    spec: &ConvSpec,
    dy: &DenseTensor,
) -> Result<ConvGrads> {
    let (n, c, h, wd) = spec.check(x, w)?;
    let (oh, ow) = (spec.output_extent(h), spec.output_extent(wd));
    let co = spec.out_channels;
    let expected = [n, co, oh, ow];
    if dy.shape() != expected {
        return Err(Error::invalid(format!(
            "conv output gradient shape {:?}, expected {:?}",
            dy.shape(),
            expected
        )));
    }
    let plane = oh * ow;
    let kk = c * spec.kernel * spec.kernel;
    let in_len = c * h * wd;
    let mut dx = DenseTensor::zeros(x.shape());
    let mut dw = DenseTensor::zeros(w.shape());
    let mut db = DenseTensor::zeros(&[co]);
    let mut cols = vec![0.0; kk * plane];
    let mut dcols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * plane]
    };
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let dys = &dy.data()[s * co * plane..(s + 1) * co * plane];
        for (o, g) in db.data_mut().iter_mut().enumerate() {
            *g += dys[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        let rhs: &[f64] = if spec.is_pointwise() {
            xs
        } else {
            im2col(xs, c, h, wd, spec, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        gemm(co, plane, kk, dys, false, rhs, true, 1.0, dw.data_mut());
        let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
        if spec.is_pointwise() {
            gemm(kk, co, plane, w.data(), true, dys, false, 0.0, dxs);
        } else {
            gemm(kk, co, plane, w.data(), true, dys, false, 0.0, &mut dcols);
            col2im(&dcols, c, h, wd, spec, dxs);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// A convolution layer owning its weight and bias parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let weight = Parameter::fan_in_uniform(
            format!("{name}.weight"),
            &spec.weight_shape(),
            spec.fan_in(),
            rng,
        );
        let bias = Parameter::zeros(format!("{name}.bias"), &[spec.out_channels]);
        Self { spec, weight, bias }
    }

    pub fn zeros(name: &str, spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: Parameter::zeros(format!("{name}.weight"), &spec.weight_shape()),
            bias: Parameter::zeros(format!("{name}.bias"), &[spec.out_channels]),
        }
    }

    /// 1x1 identity map (requires equal channel counts).
    pub fn identity(name: &str, channels: usize) -> Self {
        let mut conv = Self::zeros(name, ConvSpec::new(channels, channels, 1, 1));
        for c in 0..channels {
            conv.weight.value.data_mut()[c * channels + c] = 1.0;
        }
        conv
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        conv2d(x, &self.weight, &self.bias, &self.spec)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &DenseTensor, dy: &DenseTensor) -> Result<DenseTensor> {
        let g = conv2d_backward(x, &self.weight.value, &self.spec, dy)?;
        self.weight.accumulate(g.dw.data());
        self.bias.accumulate(g.db.data());
        Ok(g.dx)
    }
}

impl ParameterSet for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
