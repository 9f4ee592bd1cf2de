use crate::error::{Error, Result};

pub type RankId = usize;

/// A `p_r x p_c` arrangement of virtual ranks.
///
/// Ranks are numbered column-major, `id = col * p_r + row`, so the members of
/// one row communicator (a fixed column) are contiguous ids. That makes a
/// batch distribution over all `P` ranks line up with the column blocks of
/// the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridTopology {
    p_r: usize,
    p_c: usize,
}

impl GridTopology {
    pub fn new(p_r: usize, p_c: usize) -> Result<Self> {
        if p_r == 0 || p_c == 0 {
            return Err(Error::invalid("grid", format!("{p_r}x{p_c}: both sides must be >= 1")));
        }
        Ok(Self { p_r, p_c })
    }

    pub fn p_r(&self) -> usize {
        self.p_r
    }

    pub fn p_c(&self) -> usize {
        self.p_c
    }

    pub fn size(&self) -> usize {
        self.p_r * self.p_c
    }

    pub fn rank(&self, row: usize, col: usize) -> RankId {
        debug_assert!(row < self.p_r && col < self.p_c);
        col * self.p_r + row
    }

    pub fn coords(&self, rank: RankId) -> (usize, usize) {
        debug_assert!(rank < self.size());
        (rank % self.p_r, rank / self.p_r)
    }

    /// Ranks of column `col`, ordered by row: size `p_r`.
    pub fn row_comm(&self, col: usize) -> Communicator {
        Communicator::new((0..self.p_r).map(|r| self.rank(r, col)).collect())
    }

    /// Ranks of row `row`, ordered by column: size `p_c`.
    pub fn col_comm(&self, row: usize) -> Communicator {
        Communicator::new((0..self.p_c).map(|c| self.rank(row, c)).collect())
    }

    pub fn world(&self) -> Communicator {
        Communicator::new((0..self.size()).collect())
    }

    pub fn ranks(&self) -> std::ops::Range<RankId> {
        0..self.size()
    }
}

/// An ordered group of ranks; position in `members` is the communicator rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Communicator {
    members: Vec<RankId>,
}

impl Communicator {
    pub fn new(members: Vec<RankId>) -> Self {
        assert!(!members.is_empty(), "communicator needs at least one member");
        Self { members }
    }

    pub fn members(&self) -> &[RankId] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}
