use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// Pairs student layer `l` (1-based) with teacher layer `l * stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerMap {
    teacher_layers: usize,
    student_layers: usize,
    stride: usize,
}

impl LayerMap {
    pub fn new(teacher_layers: usize, student_layers: usize) -> Result<Self> {
        if student_layers == 0 || teacher_layers == 0 {
            return Err(Error::Config(
                "layer map needs at least one layer on each side".into(),
            ));
        }
        if !teacher_layers.is_multiple_of(student_layers) {
            return Err(Error::Config(format!(
                "teacher depth {teacher_layers} is not a multiple of student depth \
                 {student_layers}; pick depths where the teacher has an integer number \
                 of layers per student layer"
            )));
        }
        Ok(LayerMap {
            teacher_layers,
            student_layers,
            stride: teacher_layers / student_layers,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn student_layers(&self) -> usize {
        self.student_layers
    }

    pub fn teacher_layers(&self) -> usize {
        self.teacher_layers
    }

    /// Teacher layer (1-based) mimicked by student layer `l` (1-based).
    pub fn teacher_layer(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.student_layers {
            return Err(Error::InvalidArgument(format!(
                "student layer {l} outside 1..={}",
                self.student_layers
            )));
        }
        Ok(l * self.stride)
    }
}

/// Teacher layer index for student layer `l`; see [`LayerMap`].
pub fn layer_map(l: usize, teacher_layers: usize, student_layers: usize) -> Result<usize> {
    LayerMap::new(teacher_layers, student_layers)?.teacher_layer(l)
}

/// Head-mixing (`h_T × h_S`) and hidden-projection (`d_S × d_T`) matrices,
/// one of each per student layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingParams {
    pub head_maps: Vec<Tensor>,
    pub hidden_maps: Vec<Tensor>,
    pub trainable: bool,
}

/// [`MappingParams`] registered on a tape.
#[derive(Clone, Debug)]
pub struct MappingVars {
    pub head_maps: Vec<Var>,
    pub hidden_maps: Vec<Var>,
}

impl MappingParams {
    /// Padded-identity initialization.
    pub fn new(teacher: &ModelConfig, student: &ModelConfig, trainable: bool) -> Self {
        let layers = student.num_layers;
        MappingParams {
            head_maps: vec![Tensor::eye(teacher.num_heads, student.num_heads); layers],
            hidden_maps: vec![Tensor::eye(student.hidden_size, teacher.hidden_size); layers],
            trainable,
        }
    }

    /// Truncated-normal (std 0.02) initialization.
    pub fn random<R: Rng + ?Sized>(teacher: &ModelConfig, student: &ModelConfig, rng: &mut R) -> Self {
        let layers = student.num_layers;
        let head = [teacher.num_heads, student.num_heads];
        let hidden = [student.hidden_size, teacher.hidden_size];
        MappingParams {
            head_maps: (0..layers)
                .map(|_| Tensor::truncated_normal(&head, 0.02, rng))
                .collect(),
            hidden_maps: (0..layers)
                .map(|_| Tensor::truncated_normal(&hidden, 0.02, rng))
                .collect(),
            trainable: true,
        }
    }

    pub fn check(&self, teacher: &ModelConfig, student: &ModelConfig) -> Result<()> {
        let layers = student.num_layers;
        if self.head_maps.len() != layers || self.hidden_maps.len() != layers {
            return Err(Error::Config(format!(
                "mapping has {}/{} matrices for {layers} student layers",
                self.head_maps.len(),
                self.hidden_maps.len()
            )));
        }
        for m in &self.head_maps {
            if m.shape() != [teacher.num_heads, student.num_heads] {
                return Err(Error::shape(
                    "head map",
                    m.shape(),
                    &[teacher.num_heads, student.num_heads],
                ));
            }
        }
        for n in &self.hidden_maps {
            if n.shape() != [student.hidden_size, teacher.hidden_size] {
                return Err(Error::shape(
                    "hidden map",
                    n.shape(),
                    &[student.hidden_size, teacher.hidden_size],
                ));
            }
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> MappingVars {
        let mut reg = |t: &Tensor| {
            if self.trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        MappingVars {
            head_maps: self.head_maps.iter().map(&mut reg).collect(),
            hidden_maps: self.hidden_maps.iter().map(&mut reg).collect(),
        }
    }

    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &MappingVars) {
        let pairs = self
            .head_maps
            .iter_mut()
            .zip(&vars.head_maps)
            .chain(self.hidden_maps.iter_mut().zip(&vars.hidden_maps));
        for (t, &v) in pairs {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.head_maps.iter_mut().chain(self.hidden_maps.iter_mut())
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let heads = self
            .head_maps
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("map.head.{i}"), t));
        let hidden = self
            .hidden_maps
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("map.hidden.{i}"), t));
        heads.chain(hidden).collect()
    }

    /// Rebuilds from tensors named as in [`MappingParams::named`].
    pub fn from_named(named: Vec<(String, Tensor)>, trainable: bool) -> Result<Self> {
        let mut head_maps = Vec::new();
        let mut hidden_maps = Vec::new();
        for (name, t) in named {
            let (list, idx) = if let Some(i) = name.strip_prefix("map.head.") {
                (&mut head_maps, i)
            } else if let Some(i) = name.strip_prefix("map.hidden.") {
                (&mut hidden_maps, i)
            } else {
                return Err(Error::Format(format!("unexpected mapping tensor {name}")));
            };
            if idx.parse::<usize>().ok() != Some(list.len()) {
                return Err(Error::Format(format!("mapping tensor {name} out of order")));
            }
            list.push(t);
        }
        Ok(MappingParams {
            head_maps,
            hidden_maps,
            trainable,
        })
    }
}
