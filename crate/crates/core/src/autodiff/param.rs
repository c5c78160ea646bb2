use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Named tensor owned by a model and copied onto a tape for each forward pass.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    var: Option<Var>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
            var: None,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    /// Tape node the parameter was last bound to.
    pub fn var(&self) -> Option<Var> {
        self.var
    }

    /// Adjoint from the tape this parameter was last bound to.
    pub fn grad<'t>(&self, tape: &'t Tape) -> Option<&'t Tensor> {
        self.var.and_then(|v| tape.grad(v))
    }
}

impl Tape {
    /// Records the parameter as a leaf; it requires grad iff it is trainable.
    pub fn param(&mut self, p: &mut Parameter) -> Var {
        let v = self.leaf(p.value.clone(), p.trainable);
        p.var = Some(v);
        v
    }
}
