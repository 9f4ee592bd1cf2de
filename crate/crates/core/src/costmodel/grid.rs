use std::fmt;

use crate::error::{Error, Result};
use crate::netspec::NetworkSpec;

/// How a layer uses the `p_r` axis of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Assignment {
    /// Pure batch parallelism over all `P` processes.
    BatchOnly,
    /// Weight rows split over `p_r`, batch over `p_c` (1.5D).
    Model,
    /// Image height split over `p_r`, batch over `p_c`.
    Domain,
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::BatchOnly => "batch",
            Assignment::Model => "model",
            Assignment::Domain => "domain",
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridConfig {
    pub p_r: u64,
    pub p_c: u64,
    pub assignment: Vec<Assignment>,
}

impl GridConfig {
    pub fn new(p_r: u64, p_c: u64, assignment: Vec<Assignment>) -> Result<Self> {
        if p_r == 0 || p_c == 0 {
            return Err(Error::invalid("grid", format!("{p_r}x{p_c}: both sides must be >= 1")));
        }
        Ok(Self { p_r, p_c, assignment })
    }

    pub fn uniform(p_r: u64, p_c: u64, layers: usize, a: Assignment) -> Result<Self> {
        Self::new(p_r, p_c, vec![a; layers])
    }

    pub fn procs(&self) -> u64 {
        self.p_r * self.p_c
    }

    /// The assignment actually in force: with `p_r = 1` every layer is plain
    /// batch parallel.
    pub fn effective(&self, layer: usize) -> Assignment {
        if self.p_r == 1 {
            Assignment::BatchOnly
        } else {
            self.assignment[layer]
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if self.assignment.len() != net.len() {
            return Err(Error::invalid(
                "grid.assignment",
                format!("{} entries for a {}-layer network", self.assignment.len(), net.len()),
            ));
        }
        for (i, (a, def)) in self.assignment.iter().zip(net.layers()).enumerate() {
            if *a == Assignment::Domain && !def.is_conv() {
                return Err(Error::invalid(
                    format!("grid.assignment[{i}]"),
                    "domain parallelism applies to convolutional layers only",
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.p_r, self.p_c)
    }
}
