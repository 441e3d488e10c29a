use serde::{Deserialize, Serialize};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    /// Running statistics are stored alongside weights but skipped by the optimizer.
    pub trainable: bool,
    pub value: Vec<f32>,
}

/// Flat, ordered collection of every tensor a model owns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, trainable: bool, value: Vec<f32>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), shape.iter().product::<usize>(), "param {name} size mismatch");
        assert!(self.find(&name).is_none(), "duplicate param {name}");
        self.params.push(Param { name, shape, trainable, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params.iter().map(|p| vec![0.0; p.value.len()]).collect())
    }

    /// Stable textual description of names and shapes, used for architecture hashing.
    pub fn signature(&self) -> String {
        let mut s = String::new();
        for p in &self.params {
            s.push_str(&p.name);
            s.push(':');
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&dims.join("x"));
            s.push(if p.trainable { '+' } else { '-' });
            s.push(';');
        }
        s
    }

    /// Copies values of every parameter whose name starts with `prefix` from
    /// `source`. Shapes must agree.
    pub fn copy_prefix_from(&mut self, source: &ParamStore, prefix: &str) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let src = source
                .params
                .iter()
                .find(|q| q.name == p.name)
                .unwrap_or_else(|| panic!("source lacks parameter {}", p.name));
            assert_eq!(src.shape, p.shape, "shape mismatch for {}", p.name);
            p.value.copy_from_slice(&src.value);
            copied += 1;
        }
        copied
    }
}

/// Gradient buffers, one per parameter, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.0[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}
