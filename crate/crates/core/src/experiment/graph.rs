use std::collections::BTreeMap;

use super::ExperimentError;

/// Longest allowed chain of nested references.
pub const MAX_NESTING_DEPTH: usize = 8;

/// Checks that `edges` (parent → children) is acyclic, references only known
/// nodes, and nests no deeper than [`MAX_NESTING_DEPTH`].
pub(crate) fn validate(edges: &BTreeMap<u64, Vec<u64>>) -> Result<(), ExperimentError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done(usize),
    }

    fn visit(
        node: u64,
        edges: &BTreeMap<u64, Vec<u64>>,
        marks: &mut BTreeMap<u64, Mark>,
    ) -> Result<usize, ExperimentError> {
        match marks.get(&node) {
            Some(Mark::Done(depth)) => return Ok(*depth),
            Some(Mark::Active) => return Err(ExperimentError::Cycle(node)),
            None => {}
        }
        let children = edges
            .get(&node)
            .ok_or(ExperimentError::MissingNested(node))?;
        marks.insert(node, Mark::Active);
        let mut depth = 0;
        for &child in children {
            depth = depth.max(1 + visit(child, edges, marks)?);
        }
        if depth > MAX_NESTING_DEPTH {
            return Err(ExperimentError::TooDeep);
        }
        marks.insert(node, Mark::Done(depth));
        Ok(depth)
    }

    let mut marks = BTreeMap::new();
    for &node in edges.keys() {
        visit(node, edges, &mut marks)?;
    }
    Ok(())
}
