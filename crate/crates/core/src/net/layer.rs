use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
}

/// Fully connected layer without bias. `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub grad: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor) -> Self {
        assert_eq!(weight.shape().len(), 2, "linear weight must be out×in");
        let grad = Tensor::zeros(weight.shape());
        Linear { weight, grad }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// 2-D convolution without bias. `weight` is `out × in × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub grad: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, stride: usize, padding: usize) -> Self {
        assert_eq!(weight.shape().len(), 4, "conv weight must be out×in×kh×kw");
        assert!(stride >= 1);
        let grad = Tensor::zeros(weight.shape());
        Conv2d { weight, grad, stride, padding }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        let oh = (h + 2 * self.padding - kh) / self.stride + 1;
        let ow = (w + 2 * self.padding - kw) / self.stride + 1;
        (oh, ow)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    Relu,
    /// Square window, stride equal to the window.
    MaxPool2d { size: usize },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Linear(l) => Some(&l.weight),
            Layer::Conv2d(c) => Some(&c.weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Linear(l) => Some(&mut l.weight),
            Layer::Conv2d(c) => Some(&mut c.weight),
            _ => None,
        }
    }

    pub fn grad(&self) -> Option<&Tensor> {
        match self {
            Layer::Linear(l) => Some(&l.grad),
            Layer::Conv2d(c) => Some(&c.grad),
            _ => None,
        }
    }

    pub fn grad_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Linear(l) => Some(&mut l.grad),
            Layer::Conv2d(c) => Some(&mut c.grad),
            _ => None,
        }
    }

    /// Weight and gradient borrowed together, for optimizer updates.
    pub fn weight_and_grad_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Linear(l) => Some((&mut l.weight, &mut l.grad)),
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.grad)),
            _ => None,
        }
    }
}
