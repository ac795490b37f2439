use ndarray::Array2;

use crate::hash::ContentHasher;

pub type Mat = Array2<f64>;

/// Handle to one tensor in a [`ParamStore`]. Two layers that share weights
/// hold the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    /// Frozen tensors get gradients computed but are never updated.
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Hash over names, shapes and exact bit patterns.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for p in &self.params {
            h.part("name", p.name.as_bytes());
            h.part(
                "shape",
                format!("{}x{}", p.value.nrows(), p.value.ncols()).as_bytes(),
            );
            let bytes: Vec<u8> = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
            h.part("data", &bytes);
        }
        h.finish()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Gradient accumulator parallel to a [`ParamStore`]; slots are allocated on
/// first touch.
#[derive(Debug, Clone)]
pub struct Grads {
    shapes: Vec<(usize, usize)>,
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            shapes: store.params.iter().map(|p| p.value.dim()).collect(),
            slots: vec![None; store.len()],
        }
    }

    pub fn slot(&mut self, id: ParamId) -> &mut Mat {
        let shape = self.shapes[id.0];
        self.slots[id.0].get_or_insert_with(|| Mat::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    pub fn add(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                *self.slot(ParamId(i)) += g;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * f);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}
