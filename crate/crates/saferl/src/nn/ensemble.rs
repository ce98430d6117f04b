//! Independently initialized network ensembles.

use super::Mlp;

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<Mlp>,
}

impl Ensemble {
    /// Build `n` members with the supplied constructor; the member index
    /// lets the caller derive a distinct seed per member.
    pub fn new(n: usize, mut build: impl FnMut(usize) -> Mlp) -> Ensemble {
        assert!(n >= 1, "ensemble needs at least one member");
        let members = (0..n).map(&mut build).collect::<Vec<_>>();
        let widths = members[0].widths().to_vec();
        assert!(
            members.iter().all(|m| m.widths() == widths.as_slice()),
            "ensemble members must share one architecture"
        );
        Ensemble { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}
