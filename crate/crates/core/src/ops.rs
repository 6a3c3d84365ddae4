//! Derivative-entry accounting.
//!
//! Compute is measured in scalar derivative entries evaluated, not in
//! floating-point multiplications: one `n_w × n_w` Hessian evaluation costs
//! `n_w²` entries no matter how it is later applied.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub grad_w_entries: u64,
    pub grad_phi_entries: u64,
    pub hessian_entries: u64,
    pub mixed_entries: u64,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount {
        grad_w_entries: 0,
        grad_phi_entries: 0,
        hessian_entries: 0,
        mixed_entries: 0,
    };

    pub fn grad_w(n: usize) -> Self {
        OpCount {
            grad_w_entries: n as u64,
            ..Self::ZERO
        }
    }

    pub fn grad_phi(n: usize) -> Self {
        OpCount {
            grad_phi_entries: n as u64,
            ..Self::ZERO
        }
    }

    /// One `n_w × n_w` Hessian evaluation.
    pub fn hessian(n_w: usize) -> Self {
        OpCount {
            hessian_entries: (n_w * n_w) as u64,
            ..Self::ZERO
        }
    }

    /// One `n_phi × n_w` mixed-partial evaluation.
    pub fn mixed(n_w: usize, n_phi: usize) -> Self {
        OpCount {
            mixed_entries: (n_w * n_phi) as u64,
            ..Self::ZERO
        }
    }

    pub fn gradient_entries(&self) -> u64 {
        self.grad_w_entries + self.grad_phi_entries
    }

    pub fn second_order_entries(&self) -> u64 {
        self.hessian_entries + self.mixed_entries
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            grad_w_entries: self.grad_w_entries + rhs.grad_w_entries,
            grad_phi_entries: self.grad_phi_entries + rhs.grad_phi_entries,
            hessian_entries: self.hessian_entries + rhs.hessian_entries,
            mixed_entries: self.mixed_entries + rhs.mixed_entries,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: OpCount) {
        *self = *self + rhs;
    }
}

impl Mul<u64> for OpCount {
    type Output = OpCount;

    fn mul(self, k: u64) -> OpCount {
        OpCount {
            grad_w_entries: self.grad_w_entries * k,
            grad_phi_entries: self.grad_phi_entries * k,
            hessian_entries: self.hessian_entries * k,
            mixed_entries: self.mixed_entries * k,
        }
    }
}

impl Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a OpCount> for OpCount {
    fn sum<I: Iterator<Item = &'a OpCount>>(iter: I) -> OpCount {
        iter.copied().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_counts() {
        assert_eq!(OpCount::hessian(4).hessian_entries, 16);
        assert_eq!(OpCount::mixed(4, 10).mixed_entries, 40);
        let total = OpCount::hessian(4) + OpCount::mixed(4, 10) + OpCount::grad_w(4);
        assert_eq!(total.second_order_entries(), 56);
        assert_eq!(total.gradient_entries(), 4);
    }

    #[test]
    fn sum_and_scale_agree() {
        let one = OpCount::hessian(3) + OpCount::grad_phi(2);
        let summed: OpCount = std::iter::repeat_n(one, 5).sum();
        assert_eq!(summed, one * 5);
    }
}
