//! The fixed vocabulary of syntactic relation types that condition mask tokens.

use std::fmt;
use std::str::FromStr;

macro_rules! categories {
    ($($variant:ident => $label:literal),+ $(,)?) => {
        /// A syntactic relation type. The discriminant doubles as the row of the
        /// mask-token embedding table.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum SyntacticCategory {
            $($variant),+
        }

        impl SyntacticCategory {
            /// Every category, in table order. `Comp` is last.
            pub const ALL: &'static [SyntacticCategory] = &[$(SyntacticCategory::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $(SyntacticCategory::$variant => $label),+
                }
            }
        }
    };
}

categories! {
    Acomp => "acomp",
    Advcl => "advcl",
    Advmod => "advmod",
    Agent => "agent",
    Amod => "amod",
    Appos => "appos",
    Aux => "aux",
    Auxpass => "auxpass",
    Cc => "cc",
    Ccomp => "ccomp",
    Conj => "conj",
    Cop => "cop",
    Csubj => "csubj",
    Csubjpass => "csubjpass",
    Dep => "dep",
    Det => "det",
    Discourse => "discourse",
    Dobj => "dobj",
    Expl => "expl",
    Goeswith => "goeswith",
    Iobj => "iobj",
    Mark => "mark",
    Mwe => "mwe",
    Neg => "neg",
    Nn => "nn",
    Npadvmod => "npadvmod",
    Nsubj => "nsubj",
    Nsubjpass => "nsubjpass",
    Num => "num",
    Number => "number",
    Parataxis => "parataxis",
    Pcomp => "pcomp",
    Pobj => "pobj",
    Poss => "poss",
    Possessive => "possessive",
    Preconj => "preconj",
    Predet => "predet",
    Prep => "prep",
    Prt => "prt",
    Punct => "punct",
    Quantmod => "quantmod",
    Rcmod => "rcmod",
    Root => "root",
    Tmod => "tmod",
    Xcomp => "xcomp",
    Comp => "comp",
}

/// Size of the mask-token table: the parser-facing categories plus `comp`.
pub const N_CATEGORIES: usize = 46;

impl SyntacticCategory {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Map a parser-emitted relation label onto the fixed vocabulary.
    ///
    /// Matching is case-insensitive. Sub-typed labels (`nsubj:pass`) fall back
    /// to their base label, except for the passive subtypes which have
    /// dedicated categories. Anything unknown becomes `dep`. `comp` is never
    /// produced here; it only arises from sub-word surgery.
    pub fn from_deprel(label: &str) -> Self {
        let lower = label.trim().to_ascii_lowercase();
        match lower.as_str() {
            "nsubj:pass" => return Self::Nsubjpass,
            "csubj:pass" => return Self::Csubjpass,
            "aux:pass" => return Self::Auxpass,
            _ => {}
        }
        let base = lower.split(':').next().unwrap_or("");
        Self::ALL
            .iter()
            .copied()
            .find(|c| *c != Self::Comp && c.label() == base)
            .unwrap_or(Self::Dep)
    }
}

impl fmt::Display for SyntacticCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Exact (case-sensitive) label lookup, including `comp`. Used for file
/// formats written by this crate.
impl FromStr for SyntacticCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown syntactic category `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_has_46_distinct_entries_with_comp_last() {
        assert_eq!(SyntacticCategory::ALL.len(), N_CATEGORIES);
        let labels: HashSet<_> = SyntacticCategory::ALL.iter().map(|c| c.label()).collect();
        assert_eq!(labels.len(), N_CATEGORIES);
        assert_eq!(SyntacticCategory::Comp.index(), 45);
        for (i, c) in SyntacticCategory::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(SyntacticCategory::from_index(i), Some(*c));
        }
    }

    #[test]
    fn deprel_mapping() {
        use SyntacticCategory::*;
        assert_eq!(SyntacticCategory::from_deprel("nsubj"), Nsubj);
        assert_eq!(SyntacticCategory::from_deprel("ROOT"), Root);
        assert_eq!(SyntacticCategory::from_deprel("nsubj:pass"), Nsubjpass);
        assert_eq!(SyntacticCategory::from_deprel("csubj:pass"), Csubjpass);
        assert_eq!(SyntacticCategory::from_deprel("obl:tmod"), Dep);
        assert_eq!(SyntacticCategory::from_deprel("acl:relcl"), Dep);
        assert_eq!(SyntacticCategory::from_deprel("conj:and"), Conj);
        assert_eq!(SyntacticCategory::from_deprel("comp"), Dep);
        assert_eq!(SyntacticCategory::from_deprel("Amod"), Amod);
    }

    #[test]
    fn bridge_label_census() {
        use SyntacticCategory::*;
        // Every label the bridge emitted on its 100-caption sample, with the
        // category it must land on.
        let census: &[(&str, SyntacticCategory)] = &[
            ("root", Root),
            ("det", Det),
            ("amod", Amod),
            ("nsubj", Nsubj),
            ("nsubj:pass", Nsubjpass),
            ("obj", Dep),
            ("dobj", Dobj),
            ("obl", Dep),
            ("obl:tmod", Dep),
            ("obl:npmod", Dep),
            ("nmod", Dep),
            ("nmod:poss", Dep),
            ("case", Dep),
            ("prep", Prep),
            ("pobj", Pobj),
            ("compound", Dep),
            ("compound:prt", Dep),
            ("nummod", Dep),
            ("cc", Cc),
            ("conj", Conj),
            ("punct", Punct),
            ("aux", Aux),
            ("aux:pass", Auxpass),
            ("cop", Cop),
            ("mark", Mark),
            ("advmod", Advmod),
            ("advcl", Advcl),
            ("acl", Dep),
            ("acl:relcl", Dep),
            ("xcomp", Xcomp),
            ("ccomp", Ccomp),
            ("appos", Appos),
            ("expl", Expl),
            ("det:predet", Det),
            ("fixed", Dep),
            ("flat", Dep),
            ("parataxis", Parataxis),
            ("iobj", Iobj),
            ("csubj", Csubj),
            ("dep", Dep),
        ];
        for (label, expected) in census {
            let got = SyntacticCategory::from_deprel(label);
            assert_eq!(got, *expected, "label {label}");
            assert_ne!(got, Comp);
        }
    }

    #[test]
    fn from_str_round_trips_every_label() {
        for c in SyntacticCategory::ALL {
            assert_eq!(c.label().parse::<SyntacticCategory>().unwrap(), *c);
        }
        assert!("xyz".parse::<SyntacticCategory>().is_err());
    }
}
