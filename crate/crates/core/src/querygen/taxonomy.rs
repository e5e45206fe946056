use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Entity,
    Attribute,
    Relation,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcategory {
    Whole,
    Part,
    State,
    Color,
    Type,
    TextRendering,
    Material,
    Shape,
    Size,
    Count,
    Texture,
    Style,
    Temporal,
    Spatial,
    Action,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Entity,
        Category::Attribute,
        Category::Relation,
        Category::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Entity => "entity",
            Category::Attribute => "attribute",
            Category::Relation => "relation",
            Category::Other => "other",
        }
    }

    pub fn subcategories(self) -> &'static [Subcategory] {
        use Subcategory::*;
        match self {
            Category::Entity => &[Whole, Part],
            Category::Attribute => &[
                State,
                Color,
                Type,
                TextRendering,
                Material,
                Shape,
                Size,
                Count,
                Texture,
                Style,
                Temporal,
            ],
            Category::Relation => &[Spatial, Action],
            Category::Other => &[Other],
        }
    }
}

impl Subcategory {
    pub fn label(self) -> &'static str {
        use Subcategory::*;
        match self {
            Whole => "whole",
            Part => "part",
            State => "state",
            Color => "color",
            Type => "type",
            TextRendering => "text rendering",
            Material => "material",
            Shape => "shape",
            Size => "size",
            Count => "count",
            Texture => "texture",
            Style => "style",
            Temporal => "temporal",
            Spatial => "spatial",
            Action => "action",
            Other => "other",
        }
    }
}

/// A (category, subcategory) pair that is legal under the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct TaxonomyCategory {
    category: Category,
    subcategory: Subcategory,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    category: Category,
    subcategory: Subcategory,
}

impl TryFrom<TaxonomyRepr> for TaxonomyCategory {
    type Error = String;

    fn try_from(value: TaxonomyRepr) -> Result<Self, Self::Error> {
        TaxonomyCategory::new(value.category, value.subcategory).ok_or_else(|| {
            format!(
                "{} is not a subcategory of {}",
                value.subcategory.label(),
                value.category.label()
            )
        })
    }
}

impl From<TaxonomyCategory> for TaxonomyRepr {
    fn from(value: TaxonomyCategory) -> Self {
        TaxonomyRepr {
            category: value.category,
            subcategory: value.subcategory,
        }
    }
}

impl TaxonomyCategory {
    pub fn new(category: Category, subcategory: Subcategory) -> Option<Self> {
        category
            .subcategories()
            .contains(&subcategory)
            .then_some(TaxonomyCategory { category, subcategory })
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn subcategory(&self) -> Subcategory {
        self.subcategory
    }

    /// Every legal pair, in taxonomy order.
    pub fn all() -> Vec<TaxonomyCategory> {
        Category::ALL
            .iter()
            .flat_map(|&c| {
                c.subcategories().iter().map(move |&s| TaxonomyCategory {
                    category: c,
                    subcategory: s,
                })
            })
            .collect()
    }

    /// Parse the two labels of a `category - subcategory` pair.
    pub fn from_labels(category: &str, subcategory: &str) -> Option<Self> {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let (category, subcategory) = (norm(category), norm(subcategory));
        let category = Category::ALL.into_iter().find(|c| c.label() == category)?;
        let subcategory = category
            .subcategories()
            .iter()
            .copied()
            .find(|s| s.label() == subcategory)?;
        Some(TaxonomyCategory { category, subcategory })
    }
}

impl fmt::Display for TaxonomyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.category.label(), self.subcategory.label())
    }
}

impl FromStr for TaxonomyCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (category, subcategory) = s
            .split_once('-')
            .ok_or_else(|| format!("`{s}` is not of the form `category - subcategory`"))?;
        TaxonomyCategory::from_labels(category, subcategory).ok_or_else(|| format!("`{s}` is not in the taxonomy"))
    }
}

/// The taxonomy block embedded in the tuple-extraction prompt.
pub const TAXONOMY_BLOCK: &str = "\
Entity relationships:
* entity - whole
* entity - part

Attribute relationships:
* attribute - state
* attribute - color
* attribute - type
* attribute - text rendering
* attribute - material
* attribute - shape
* attribute - size
* attribute - count
* attribute - texture
* attribute - style
* attribute - temporal

Relations:
* relation - spatial
* relation - action

Miscellaneous:
* other - other";
