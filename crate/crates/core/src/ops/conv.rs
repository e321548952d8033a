use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingSpec {
    pub mode: PaddingMode,
    pub width: usize,
}

impl PaddingSpec {
    pub const NONE: PaddingSpec = PaddingSpec::zero(0);

    pub const fn zero(width: usize) -> Self {
        Self {
            mode: PaddingMode::Zero,
            width,
        }
    }

    pub const fn reflect(width: usize) -> Self {
        Self {
            mode: PaddingMode::Reflect,
            width,
        }
    }
}

/// Geometry of a (possibly rectangular) grouped convolution with implicit zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self {
            stride,
            pad_h: pad,
            pad_w: pad,
            groups,
        }
    }
}

/// Output extent of a strided window over `len + 2·pad` positions.
pub fn conv_output_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_dims<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Dims> {
    const OP: &str = "conv2d";
    let (n, cin, h, w) = x.dims4(OP)?;
    let (cout, cin_g, kh, kw) = weight.dims4(OP)?;
    if geom.groups == 0 || geom.stride == 0 {
        return Err(Error::InvalidArgument("conv2d: stride and groups must be >= 1".into()));
    }
    if cin % geom.groups != 0 {
        return Err(Error::shape(OP, "input channels (divisible by groups)", geom.groups, cin));
    }
    if cout % geom.groups != 0 {
        return Err(Error::shape(OP, "output channels (divisible by groups)", geom.groups, cout));
    }
    if cin / geom.groups != cin_g {
        return Err(Error::shape(OP, "weight input channels", cin / geom.groups, cin_g));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(OP, "bias", [cout], b.shape()));
        }
    }
    let ho = conv_output_extent(h, kh, geom.stride, geom.pad_h)
        .ok_or_else(|| Error::shape(OP, "padded height", format!(">= {kh}"), h + 2 * geom.pad_h))?;
    let wo = conv_output_extent(w, kw, geom.stride, geom.pad_w)
        .ok_or_else(|| Error::shape(OP, "padded width", format!(">= {kw}"), w + 2 * geom.pad_w))?;
    Ok(Dims {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / geom.groups,
        kh,
        kw,
        ho,
        wo,
    })
}

/// Output indices `o` in `[lo, hi)` for which `o·stride + off - pad` lands inside `[0, len)`.
fn valid_range(out_len: usize, len: usize, stride: usize, pad: usize, off: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let hi = if len + pad > off {
        ((len + pad - off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Real>(x: &[T], d: &Dims, geom: ConvGeom, cols: &mut [T]) {
    let p = d.p();
    for ci in 0..d.cin_g {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (ylo, yhi) = valid_range(d.ho, d.h, geom.stride, geom.pad_h, ky);
            for kx in 0..d.kw {
                let (xlo, xhi) = valid_range(d.wo, d.w, geom.stride, geom.pad_w, kx);
                let row = ((ci * d.kh + ky) * d.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                dst.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * geom.stride + ky - geom.pad_h;
                    let src = &plane[iy * d.w..(iy + 1) * d.w];
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if geom.stride == 1 {
                        let ix0 = xlo + kx - geom.pad_w;
                        out_row[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out_row[ox] = src[ox * geom.stride + kx - geom.pad_w];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], d: &Dims, geom: ConvGeom, dx: &mut [T]) {
    let p = d.p();
    for ci in 0..d.cin_g {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (ylo, yhi) = valid_range(d.ho, d.h, geom.stride, geom.pad_h, ky);
            for kx in 0..d.kw {
                let (xlo, xhi) = valid_range(d.wo, d.w, geom.stride, geom.pad_w, kx);
                let row = ((ci * d.kh + ky) * d.kw + kx) * p;
                let src = &cols[row..row + p];
                for oy in ylo..yhi {
                    let iy = oy * geom.stride + ky - geom.pad_h;
                    let dst = &mut plane[iy * d.w..(iy + 1) * d.w];
                    let in_row = &src[oy * d.wo..(oy + 1) * d.wo];
                    for ox in xlo..xhi {
                        dst[ox * geom.stride + kx - geom.pad_w] =
                            dst[ox * geom.stride + kx - geom.pad_w] + in_row[ox];
                    }
                }
            }
        }
    }
}

fn is_pointwise(d: &Dims, geom: ConvGeom) -> bool {
    d.kh == 1 && d.kw == 1 && geom.stride == 1 && geom.pad_h == 0 && geom.pad_w == 0
}

pub(crate) fn conv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, weight, bias, geom)?;
    let (k, p) = (d.k(), d.p());
    let pointwise = is_pointwise(&d, geom);
    let mut out = vec![T::zero(); d.n * d.cout * p];
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let in_plane = d.h * d.w;
    for n in 0..d.n {
        for g in 0..geom.groups {
            let xg = &x.data()[(n * d.cin + g * d.cin_g) * in_plane..][..d.cin_g * in_plane];
            let src: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, &d, geom, &mut cols);
                &cols
            };
            let wg = &weight.data()[g * d.cout_g * k..][..d.cout_g * k];
            let og = &mut out[(n * d.cout + g * d.cout_g) * p..][..d.cout_g * p];
            T::gemm(d.cout_g, k, p, T::one(), wg, (k as isize, 1), src, (p as isize, 1), T::zero(), og, (p as isize, 1));
        }
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                for v in &mut out[(n * d.cout + co) * p..][..p] {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.n, d.cout, d.ho, d.wo], out))
}

/// `(d input, d weight, d bias)`.
pub(crate) type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Adjoint of [`conv_forward`].
pub(crate) fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    geom: ConvGeom,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(x, weight, None, geom)?;
    let (k, p) = (d.k(), d.p());
    let pointwise = is_pointwise(&d, geom);
    let in_plane = d.h * d.w;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let gy = grad_out.data();
    for n in 0..d.n {
        for g in 0..geom.groups {
            let xg = &x.data()[(n * d.cin + g * d.cin_g) * in_plane..][..d.cin_g * in_plane];
            let src: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, &d, geom, &mut cols);
                &cols
            };
            let wg = &weight.data()[g * d.cout_g * k..][..d.cout_g * k];
            let gyg = &gy[(n * d.cout + g * d.cout_g) * p..][..d.cout_g * p];
            let dwg = &mut dw[g * d.cout_g * k..][..d.cout_g * k];
            // dW += dY · colsᵀ
            T::gemm(d.cout_g, p, k, T::one(), gyg, (p as isize, 1), src, (1, p as isize), T::one(), dwg, (k as isize, 1));
            let dxg = &mut dx[(n * d.cin + g * d.cin_g) * in_plane..][..d.cin_g * in_plane];
            // dcols = Wᵀ · dY
            if pointwise {
                T::gemm(k, d.cout_g, p, T::one(), wg, (1, k as isize), gyg, (p as isize, 1), T::zero(), dxg, (p as isize, 1));
            } else {
                T::gemm(k, d.cout_g, p, T::one(), wg, (1, k as isize), gyg, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));
                col2im(&dcols, &d, geom, dxg);
            }
        }
    }
    let db = has_bias.then(|| {
        let mut db = vec![T::zero(); d.cout];
        for n in 0..d.n {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc = *acc + gy[(n * d.cout + co) * p..][..p].iter().copied().sum::<T>();
            }
        }
        Tensor::from_parts(vec![d.cout], db)
    });
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        db,
    ))
}

#[inline]
fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= len {
        2 * (len - 1) - i
    } else {
        i
    };
    r as usize
}

pub(crate) fn reflect_pad<T: Real>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    const OP: &str = "reflect_pad";
    let (n, c, h, w) = x.dims4(OP)?;
    for extent in [h, w] {
        if pad >= extent {
            return Err(Error::ReflectPad {
                op: OP,
                width: pad,
                extent,
            });
        }
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(n * c * hp * wp);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..hp {
            let sy = reflect_index(y as isize - pad as isize, h);
            for xx in 0..wp {
                let sx = reflect_index(xx as isize - pad as isize, w);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, hp, wp], out))
}

pub(crate) fn reflect_pad_backward<T: Real>(input_shape: &[usize], pad: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (plane, gplane) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(hp * wp)) {
        for y in 0..hp {
            let sy = reflect_index(y as isize - pad as isize, h);
            for xx in 0..wp {
                let sx = reflect_index(xx as isize - pad as isize, w);
                plane[sy * w + sx] = plane[sy * w + sx] + gplane[y * wp + xx];
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Square-kernel 2-D cross-correlation with zero or reflect padding.
///
/// `weight` is `C_out × (C_in/groups) × k × k`; the output extent is
/// `(H + 2·pad − k)/stride + 1` along each spatial axis.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: PaddingSpec,
    groups: usize,
) -> Result<Tensor<T>> {
    let (_, _, kh, kw) = weight.dims4("conv2d")?;
    if kh != kw {
        return Err(Error::shape("conv2d", "kernel width (square kernel)", kh, kw));
    }
    match padding.mode {
        PaddingMode::Zero => conv_forward(input, weight, bias, ConvGeom::new(stride, padding.width, groups)),
        PaddingMode::Reflect => {
            let padded = reflect_pad(input, padding.width)?;
            conv_forward(&padded, weight, bias, ConvGeom::new(stride, 0, groups))
        }
    }
}
