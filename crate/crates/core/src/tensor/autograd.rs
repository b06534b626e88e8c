use std::collections::{HashMap, HashSet};

use super::{Result, Tensor, TensorError};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the parents in recording order, the op's forward output and the
/// upstream gradient; returns one gradient per parent (`None` when the parent
/// does not require one).
pub trait Backward: Send + Sync {
    fn backward(&self, parents: &[Tensor], output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

impl<F> Backward for F
where
    F: Fn(&[Tensor], &[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync,
{
    fn backward(&self, parents: &[Tensor], output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        self(parents, output, grad)
    }
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (tensor, children_pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for p in node.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

fn accumulate(slot: &mut Vec<f64>, g: &[f64]) {
    for (s, v) in slot.iter_mut().zip(g) {
        *s += v;
    }
}

impl Tensor {
    /// Reverse-mode pass from a single-element root.
    ///
    /// Fails if the root is not scalar, does not require a gradient, or if any
    /// reachable tensor still holds a gradient from an earlier pass.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must have exactly one element, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract("backward root does not require grad".into()));
        }
        let order = topo_order(self);
        if order.iter().any(|t| t.grad_lock().is_some()) {
            return Err(TensorError::Contract(
                "gradient already populated; reset grads before a second backward pass".into(),
            ));
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let g = grads.remove(&t.id()).unwrap_or_else(|| vec![0.0; t.numel()]);
            if let Some(node) = t.node() {
                let parent_grads = {
                    let out = t.data();
                    node.op.backward(&node.parents, &out, &g)
                };
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    match grads.get_mut(&p.id()) {
                        Some(slot) => accumulate(slot, &pg),
                        None => {
                            grads.insert(p.id(), pg);
                        }
                    }
                }
            }
            *t.grad_lock() = Some(g);
        }
        Ok(())
    }
}
