//! Propositional abstraction of guard expressions.
//!
//! Guard-level reasoning (implication checking, vacuity detection,
//! contradiction search) enumerates assignments to the atoms of the guards
//! involved. The abstraction is deliberately atom-level: distinct threshold
//! comparisons over the same predicate are independent propositions, so the
//! results agree exactly with a brute-force enumeration oracle over the
//! same atom space.
//!
//! Variables:
//! - boolean tests on one `(scope, predicate)` share a single boolean
//!   variable (both polarities fold onto it);
//! - token tests on a predicate covered by an exclusivity axiom share a
//!   domain variable ranging over the mentioned tokens plus a sentinel
//!   "none of these";
//! - token tests on non-exclusive predicates, threshold comparisons, and
//!   causation links are independent booleans.
//!
//! Quantifiers are propositionally transparent: atoms inside
//! `exists act/result` are tagged with their innermost scope so that
//! act-level and case-level uses of one predicate stay distinct.

use std::collections::BTreeMap;

use crate::kb::{AtomTest, ExclusiveGroup, GuardExpr};

/// Innermost quantifier scope of an atom occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Case,
    Act,
    Result,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum VarKey {
    Bool(Scope, String),
    Domain(Scope, String),
    Indep(Scope, String, AtomTest),
    Causes(Scope),
}

#[derive(Debug)]
enum VarDef {
    Bool,
    Domain(Vec<String>),
}

/// The variable space spanned by a set of guard expressions.
pub struct PropSpace {
    keys: BTreeMap<VarKey, usize>,
    defs: Vec<VarDef>,
    exclusive: Vec<String>,
    atom_keys: usize,
}

/// One total assignment: a value index per variable.
pub type PropAssignment = Vec<usize>;

impl PropSpace {
    /// Builds the space over the union of atoms of `exprs`.
    pub fn build(exprs: &[&GuardExpr], exclusivity: &[ExclusiveGroup]) -> PropSpace {
        let mut space = PropSpace {
            keys: BTreeMap::new(),
            defs: Vec::new(),
            exclusive: exclusivity.iter().map(|g| g.predicate.clone()).collect(),
            atom_keys: 0,
        };
        let mut atom_set = std::collections::BTreeSet::new();
        for expr in exprs {
            space.collect(expr, Scope::Case, &mut atom_set);
        }
        space.atom_keys = atom_set.len();
        space
    }

    fn is_exclusive(&self, predicate: &str) -> bool {
        self.exclusive.iter().any(|p| p == predicate)
    }

    fn collect(
        &mut self,
        expr: &GuardExpr,
        scope: Scope,
        atoms: &mut std::collections::BTreeSet<(Scope, String, AtomTest)>,
    ) {
        match expr {
            GuardExpr::Const(_) => {}
            GuardExpr::CausesLink => {
                atoms.insert((scope, "causes".to_string(), AtomTest::Bool(true)));
                let key = VarKey::Causes(scope);
                if !self.keys.contains_key(&key) {
                    self.keys.insert(key, self.defs.len());
                    self.defs.push(VarDef::Bool);
                }
            }
            GuardExpr::Atom { predicate, test } => {
                atoms.insert((scope, predicate.clone(), test.clone()));
                match test {
                    AtomTest::Bool(_) => {
                        let key = VarKey::Bool(scope, predicate.clone());
                        if !self.keys.contains_key(&key) {
                            self.keys.insert(key, self.defs.len());
                            self.defs.push(VarDef::Bool);
                        }
                    }
                    AtomTest::Token(token) => {
                        if self.is_exclusive(predicate) {
                            let key = VarKey::Domain(scope, predicate.clone());
                            let idx = *self.keys.entry(key).or_insert_with(|| {
                                self.defs.push(VarDef::Domain(Vec::new()));
                                self.defs.len() - 1
                            });
                            if let VarDef::Domain(tokens) = &mut self.defs[idx] {
                                if !tokens.contains(token) {
                                    tokens.push(token.clone());
                                }
                            }
                        } else {
                            let key =
                                VarKey::Indep(scope, predicate.clone(), test.clone());
                            if !self.keys.contains_key(&key) {
                                self.keys.insert(key, self.defs.len());
                                self.defs.push(VarDef::Bool);
                            }
                        }
                    }
                    AtomTest::Cmp(_, _) => {
                        let key = VarKey::Indep(scope, predicate.clone(), test.clone());
                        if !self.keys.contains_key(&key) {
                            self.keys.insert(key, self.defs.len());
                            self.defs.push(VarDef::Bool);
                        }
                    }
                }
            }
            GuardExpr::Not(inner) => self.collect(inner, scope, atoms),
            GuardExpr::And(items) | GuardExpr::Or(items) => {
                for item in items {
                    self.collect(item, scope, atoms);
                }
            }
            GuardExpr::ExistsAct(inner) => self.collect(inner, Scope::Act, atoms),
            GuardExpr::ExistsResult(inner) => self.collect(inner, Scope::Result, atoms),
        }
    }

    /// Number of distinct atom occurrences keys; compared against caps.
    pub fn atom_key_count(&self) -> usize {
        self.atom_keys
    }

    /// Total number of assignments, or `None` when it overflows the budget.
    pub fn assignment_count(&self, budget: u64) -> Option<u64> {
        let mut total: u64 = 1;
        for def in &self.defs {
            let domain = match def {
                VarDef::Bool => 2,
                // +1 for the "none of the mentioned tokens" sentinel
                VarDef::Domain(tokens) => tokens.len() as u64 + 1,
            };
            total = total.checked_mul(domain)?;
            if total > budget {
                return None;
            }
        }
        Some(total)
    }

    /// Calls `visit` on every assignment until it returns `false`.
    /// Returns `true` iff the enumeration ran to completion.
    pub fn for_each_assignment(&self, mut visit: impl FnMut(&PropAssignment) -> bool) -> bool {
        let domains: Vec<usize> = self
            .defs
            .iter()
            .map(|def| match def {
                VarDef::Bool => 2,
                VarDef::Domain(tokens) => tokens.len() + 1,
            })
            .collect();
        let mut current: PropAssignment = vec![0; domains.len()];
        loop {
            if !visit(&current) {
                return false;
            }
            // mixed-radix increment
            let mut i = 0;
            loop {
                if i == domains.len() {
                    return true;
                }
                current[i] += 1;
                if current[i] < domains[i] {
                    break;
                }
                current[i] = 0;
                i += 1;
            }
        }
    }

    /// Evaluates a guard under a total assignment (two-valued).
    pub fn eval(&self, expr: &GuardExpr, assignment: &PropAssignment) -> bool {
        self.eval_scoped(expr, assignment, Scope::Case)
    }

    fn eval_scoped(&self, expr: &GuardExpr, assignment: &PropAssignment, scope: Scope) -> bool {
        match expr {
            GuardExpr::Const(b) => *b,
            GuardExpr::CausesLink => {
                let idx = self.keys[&VarKey::Causes(scope)];
                assignment[idx] == 1
            }
            GuardExpr::Atom { predicate, test } => match test {
                AtomTest::Bool(b) => {
                    let idx = self.keys[&VarKey::Bool(scope, predicate.clone())];
                    (assignment[idx] == 1) == *b
                }
                AtomTest::Token(token) => {
                    if self.is_exclusive(predicate) {
                        let idx = self.keys[&VarKey::Domain(scope, predicate.clone())];
                        if let VarDef::Domain(tokens) = &self.defs[idx] {
                            let picked = assignment[idx];
                            picked < tokens.len() && &tokens[picked] == token
                        } else {
                            unreachable!("domain var mismatch")
                        }
                    } else {
                        let idx =
                            self.keys[&VarKey::Indep(scope, predicate.clone(), test.clone())];
                        assignment[idx] == 1
                    }
                }
                AtomTest::Cmp(_, _) => {
                    let idx = self.keys[&VarKey::Indep(scope, predicate.clone(), test.clone())];
                    assignment[idx] == 1
                }
            },
            GuardExpr::Not(inner) => !self.eval_scoped(inner, assignment, scope),
            GuardExpr::And(items) => items
                .iter()
                .all(|item| self.eval_scoped(item, assignment, scope)),
            GuardExpr::Or(items) => items
                .iter()
                .any(|item| self.eval_scoped(item, assignment, scope)),
            GuardExpr::ExistsAct(inner) => self.eval_scoped(inner, assignment, Scope::Act),
            GuardExpr::ExistsResult(inner) => self.eval_scoped(inner, assignment, Scope::Result),
        }
    }
}

/// Satisfiability of a guard under the abstraction: `None` when the atom
/// count exceeds `atom_cap`.
pub fn satisfiable(
    expr: &GuardExpr,
    exclusivity: &[ExclusiveGroup],
    atom_cap: usize,
) -> Option<bool> {
    let space = PropSpace::build(&[expr], exclusivity);
    if space.atom_key_count() > atom_cap || space.assignment_count(1 << 22).is_none() {
        return None;
    }
    let mut found = false;
    space.for_each_assignment(|assignment| {
        if space.eval(expr, assignment) {
            found = true;
            return false;
        }
        true
    });
    Some(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn excl() -> Vec<ExclusiveGroup> {
        vec![ExclusiveGroup {
            predicate: "mental_state".to_string(),
            tokens: ["Intentional", "Negligent"]
                .into_iter()
                .map(String::from)
                .collect(),
        }]
    }

    #[test]
    fn exclusive_token_pair_is_unsatisfiable() {
        let guard = GuardExpr::And(vec![
            GuardExpr::atom("mental_state", AtomTest::Token("Intentional".to_string())),
            GuardExpr::atom("mental_state", AtomTest::Token("Negligent".to_string())),
        ]);
        assert_eq!(satisfiable(&guard, &excl(), 16), Some(false));
    }

    #[test]
    fn non_exclusive_token_pair_is_satisfiable() {
        let guard = GuardExpr::And(vec![
            GuardExpr::atom("role", AtomTest::Token("organizer".to_string())),
            GuardExpr::atom("role", AtomTest::Token("participant".to_string())),
        ]);
        assert_eq!(satisfiable(&guard, &excl(), 16), Some(true));
    }

    #[test]
    fn boolean_polarities_share_one_variable() {
        let guard = GuardExpr::And(vec![
            GuardExpr::atom("x", AtomTest::Bool(true)),
            GuardExpr::Not(Box::new(GuardExpr::atom("x", AtomTest::Bool(true)))),
        ]);
        assert_eq!(satisfiable(&guard, &[], 16), Some(false));

        let both_tests = GuardExpr::And(vec![
            GuardExpr::atom("x", AtomTest::Bool(true)),
            GuardExpr::atom("x", AtomTest::Bool(false)),
        ]);
        assert_eq!(satisfiable(&both_tests, &[], 16), Some(false));
    }

    #[test]
    fn scopes_keep_predicates_distinct() {
        // action inside `exists act` is a different proposition than a
        // case-level action atom.
        let guard = GuardExpr::And(vec![
            GuardExpr::ExistsAct(Box::new(GuardExpr::atom(
                "flag",
                AtomTest::Bool(true),
            ))),
            GuardExpr::Not(Box::new(GuardExpr::atom("flag", AtomTest::Bool(true)))),
        ]);
        assert_eq!(satisfiable(&guard, &[], 16), Some(true));
    }

    #[test]
    fn atom_cap_yields_none() {
        let items: Vec<GuardExpr> = (0..20)
            .map(|i| GuardExpr::atom(&format!("p{i}"), AtomTest::Bool(true)))
            .collect();
        assert_eq!(satisfiable(&GuardExpr::And(items), &[], 16), None);
    }
}
