//! Tagged feature maps and motion flows exchanged between the stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Plane a feature map is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameOfReference {
    /// Camera image plane (feature-grid pixels of one view).
    Camera,
    /// Ground-plane scene grid.
    Scene,
}

/// A `channels × height × width` array tagged with its view, capture time and
/// plane.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub view_id: usize,
    pub timestamp: f64,
    pub frame: FrameOfReference,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, view_id: usize, timestamp: f64, frame: FrameOfReference) -> Result<Self> {
        tensor.dims3()?;
        Ok(FeatureMap {
            tensor,
            view_id,
            timestamp,
            frame,
        })
    }

    pub fn camera(tensor: Tensor, view_id: usize) -> Result<Self> {
        Self::new(tensor, view_id, 0.0, FrameOfReference::Camera)
    }

    pub fn scene(tensor: Tensor, view_id: usize) -> Result<Self> {
        Self::new(tensor, view_id, 0.0, FrameOfReference::Scene)
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    /// Mean and variance over all entries.
    pub fn stats(&self) -> (f64, f64) {
        let m = self.tensor.mean();
        let n = self.tensor.len().max(1) as f64;
        let var = self.tensor.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        (m, var)
    }
}

/// A dense `2 × H × W` displacement field in feature-grid pixels; channel 0 is
/// `dx`, channel 1 is `dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFlow {
    pub flow: Tensor,
    /// Scale index `j ∈ 1..=m`, coarsest first.
    pub scale_index: usize,
    /// `(reference view, other view)`.
    pub view_pair: (usize, usize),
}

impl MotionFlow {
    pub fn new(flow: Tensor, scale_index: usize, view_pair: (usize, usize)) -> Result<Self> {
        let (c, _, _) = flow.dims3()?;
        if c != 2 {
            return Err(Error::shape("MotionFlow", 2, c));
        }
        if !flow.is_finite() {
            return Err(Error::InvalidArgument("non-finite motion flow".into()));
        }
        Ok(MotionFlow {
            flow,
            scale_index,
            view_pair,
        })
    }

    pub fn zeros(h: usize, w: usize, view_pair: (usize, usize)) -> Self {
        MotionFlow {
            flow: Tensor::zeros(&[2, h, w]),
            scale_index: 1,
            view_pair,
        }
    }

    pub fn constant(h: usize, w: usize, dx: f64, dy: f64, view_pair: (usize, usize)) -> Self {
        let flow = Tensor::from_fn3(2, h, w, |c, _, _| if c == 0 { dx } else { dy });
        MotionFlow {
            flow,
            scale_index: 1,
            view_pair,
        }
    }

    pub fn height(&self) -> usize {
        self.flow.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.flow.shape()[2]
    }

    /// Mean endpoint distance to another flow of the same size.
    pub fn endpoint_error(&self, other: &MotionFlow) -> Result<f64> {
        if self.flow.shape() != other.flow.shape() {
            return Err(Error::shape(
                "endpoint_error",
                format!("{:?}", self.flow.shape()),
                format!("{:?}", other.flow.shape()),
            ));
        }
        let hw = self.height() * self.width();
        let (a, b) = (self.flow.data(), other.flow.data());
        let total: f64 = (0..hw)
            .map(|p| ((a[p] - b[p]).powi(2) + (a[hw + p] - b[hw + p]).powi(2)).sqrt())
            .sum();
        Ok(total / hw.max(1) as f64)
    }
}

/// Scene-level density grid whose integral is the crowd count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Ground-truth count for rendered maps; the integral for predictions.
    pub count: f64,
    pub grid: Option<crate::geometry::ScenePlaneGrid>,
}

impl DensityMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DensityMap {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            count: 0.0,
            grid: None,
        }
    }

    /// Wrap a predicted `1 × rows × cols` (or `rows × cols`) map; the count
    /// is its integral.
    pub fn from_prediction(t: &Tensor) -> Result<Self> {
        let (rows, cols) = match t.shape() {
            &[1, r, c] | &[r, c] => (r, c),
            other => return Err(Error::shape("DensityMap", "[1, rows, cols]", format!("{other:?}"))),
        };
        let values = t.data().to_vec();
        let count = values.iter().sum();
        Ok(DensityMap {
            rows,
            cols,
            values,
            count,
            grid: None,
        })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.rows, self.cols], self.values.clone()).expect("density shape")
    }
}
