use avsep_tensor::{Element, Tensor};

use super::config::NormKind;
use super::params::{Binder, Init, ParamSpec};

const NORM_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.2;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn groups_for(channels: usize) -> usize {
    gcd(channels, 8).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Act {
    Relu,
    Leaky,
}

impl Act {
    pub fn apply<T: Element>(self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Act::Relu => x.relu(),
            Act::Leaky => x.leaky_relu(T::from_f64_lossy(LEAKY_SLOPE)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ConvKind {
    D1,
    D2,
    D3,
    /// Transposed 2-D.
    T2,
}

/// Convolution with optional group normalization (which replaces the bias).
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub name: String,
    kind: ConvKind,
    pub cin: usize,
    pub cout: usize,
    kernel: Vec<usize>,
    stride: Vec<usize>,
    pad: Vec<usize>,
    output_pad: [usize; 2],
    norm: Option<usize>,
    gain: f64,
}

impl Conv {
    fn new(name: String, kind: ConvKind, cin: usize, cout: usize, kernel: Vec<usize>, stride: Vec<usize>, pad: Vec<usize>) -> Self {
        Self {
            name,
            kind,
            cin,
            cout,
            kernel,
            stride,
            pad,
            output_pad: [0, 0],
            norm: None,
            gain: 1.0,
        }
    }

    pub fn d1(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self::new(name.into(), ConvKind::D1, cin, cout, vec![k], vec![stride], vec![pad])
    }

    pub fn d2(name: impl Into<String>, cin: usize, cout: usize, k: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Self {
        Self::new(name.into(), ConvKind::D2, cin, cout, k.to_vec(), stride.to_vec(), pad.to_vec())
    }

    pub fn d3(name: impl Into<String>, cin: usize, cout: usize, k: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self::new(name.into(), ConvKind::D3, cin, cout, k.to_vec(), stride.to_vec(), pad.to_vec())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn t2(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: [usize; 2],
        stride: [usize; 2],
        pad: [usize; 2],
        output_pad: [usize; 2],
    ) -> Self {
        let mut c = Self::new(name.into(), ConvKind::T2, cin, cout, k.to_vec(), stride.to_vec(), pad.to_vec());
        c.output_pad = output_pad;
        c
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = match norm {
            NormKind::None => None,
            NormKind::Group => Some(groups_for(self.cout)),
        };
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    fn weight_shape(&self) -> Vec<usize> {
        let mut s = match self.kind {
            ConvKind::T2 => vec![self.cin, self.cout],
            _ => vec![self.cout, self.cin],
        };
        s.extend_from_slice(&self.kernel);
        s
    }

    fn fan_in(&self) -> usize {
        let taps: usize = self.kernel.iter().product();
        match self.kind {
            // each output position of a transposed conv sees taps / stride^2 inputs
            ConvKind::T2 => (self.cin * taps / self.stride.iter().product::<usize>()).max(1),
            _ => self.cin * taps,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: self.weight_shape(),
            init: Init::He {
                fan_in: self.fan_in(),
                gain: self.gain,
            },
        });
        match self.norm {
            None => out.push(ParamSpec {
                name: format!("{}.bias", self.name),
                shape: vec![self.cout],
                init: Init::Zeros,
            }),
            Some(_) => {
                out.push(ParamSpec {
                    name: format!("{}.gn.gamma", self.name),
                    shape: vec![self.cout],
                    init: Init::Ones,
                });
                out.push(ParamSpec {
                    name: format!("{}.gn.beta", self.name),
                    shape: vec![self.cout],
                    init: Init::Zeros,
                });
            }
        }
    }

    pub fn forward<T: Element>(&self, b: &Binder<T>, x: &Tensor<T>) -> Tensor<T> {
        let w = b.get(&format!("{}.weight", self.name));
        let bias = self.norm.is_none().then(|| b.get(&format!("{}.bias", self.name)));
        let bias = bias.as_ref();
        let (s, p) = (&self.stride, &self.pad);
        let y = match self.kind {
            ConvKind::D1 => x.conv1d(&w, bias, s[0], p[0]),
            ConvKind::D2 => x.conv2d(&w, bias, [s[0], s[1]], [p[0], p[1]]),
            ConvKind::D3 => x.conv3d(&w, bias, [s[0], s[1], s[2]], [p[0], p[1], p[2]]),
            ConvKind::T2 => x.conv_transpose2d(&w, bias, [s[0], s[1]], [p[0], p[1]], self.output_pad),
        };
        match self.norm {
            None => y,
            Some(groups) => y.group_norm(
                &b.get(&format!("{}.gn.gamma", self.name)),
                &b.get(&format!("{}.gn.beta", self.name)),
                groups,
                T::from_f64_lossy(NORM_EPS),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    name: String,
    cin: usize,
    cout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: vec![self.cout, self.cin],
            init: Init::Uniform { fan_in: self.cin },
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: vec![self.cout],
            init: Init::Uniform { fan_in: self.cin },
        });
    }

    pub fn forward<T: Element>(&self, b: &Binder<T>, x: &Tensor<T>) -> Tensor<T> {
        let w = b.get(&format!("{}.weight", self.name));
        let bias = b.get(&format!("{}.bias", self.name));
        x.linear(&w, Some(&bias))
    }
}
