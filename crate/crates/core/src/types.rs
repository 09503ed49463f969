//! Small domain enums and identifiers shared across modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Dietary constituent used for goal tracking. `Other` marks unlabeled foods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryLabel {
    FruitVeg,
    RedProcessedMeat,
    Fish,
    AddedSugar,
    Nut,
    Water,
    Other,
}

impl CategoryLabel {
    pub const ALL: [CategoryLabel; 7] = [
        CategoryLabel::FruitVeg,
        CategoryLabel::RedProcessedMeat,
        CategoryLabel::Fish,
        CategoryLabel::AddedSugar,
        CategoryLabel::Nut,
        CategoryLabel::Water,
        CategoryLabel::Other,
    ];

    /// The six labels goals can target.
    pub const TRACKED: [CategoryLabel; 6] = [
        CategoryLabel::FruitVeg,
        CategoryLabel::RedProcessedMeat,
        CategoryLabel::Fish,
        CategoryLabel::AddedSugar,
        CategoryLabel::Nut,
        CategoryLabel::Water,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryLabel::FruitVeg => "fruit_veg",
            CategoryLabel::RedProcessedMeat => "red_processed_meat",
            CategoryLabel::Fish => "fish",
            CategoryLabel::AddedSugar => "added_sugar",
            CategoryLabel::Nut => "nut",
            CategoryLabel::Water => "water",
            CategoryLabel::Other => "other",
        }
    }

    /// Human-readable name used in responses.
    pub fn display_name(self) -> &'static str {
        match self {
            CategoryLabel::FruitVeg => "fruit & vegetable",
            CategoryLabel::RedProcessedMeat => "red & processed meat",
            CategoryLabel::Fish => "fish",
            CategoryLabel::AddedSugar => "added sugar",
            CategoryLabel::Nut => "nut",
            CategoryLabel::Water => "water",
            CategoryLabel::Other => "other",
        }
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CategoryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CategoryLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown category label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MealOccasion {
    Breakfast,
    Lunch,
    Dinner,
    Snack,
}

impl MealOccasion {
    pub const ALL: [MealOccasion; 4] = [
        MealOccasion::Breakfast,
        MealOccasion::Lunch,
        MealOccasion::Dinner,
        MealOccasion::Snack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MealOccasion::Breakfast => "breakfast",
            MealOccasion::Lunch => "lunch",
            MealOccasion::Dinner => "dinner",
            MealOccasion::Snack => "snack",
        }
    }

    /// The meal a user is most likely asking about at a given local hour.
    pub fn for_local_hour(hour: u32) -> MealOccasion {
        match hour {
            4..=9 => MealOccasion::Breakfast,
            10..=13 => MealOccasion::Lunch,
            17..=21 => MealOccasion::Dinner,
            _ => MealOccasion::Snack,
        }
    }
}

impl fmt::Display for MealOccasion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MealOccasion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MealOccasion::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::validation(format!("invalid meal occasion `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Daily,
    Weekly,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Daily => "daily",
            Period::Weekly => "weekly",
        }
    }

    pub fn per_unit(self) -> &'static str {
        match self {
            Period::Daily => "day",
            Period::Weekly => "week",
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "daily" => Ok(Period::Daily),
            "weekly" => Ok(Period::Weekly),
            _ => Err(Error::validation(format!("invalid period `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtLeast => "at_least",
            Direction::AtMost => "at_most",
        }
    }
}

macro_rules! id_newtype {
    ($name:ident, $prefix:literal, $width:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{:0", $width, "}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| Error::validation(format!("malformed id `{s}`")))
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.to_string()
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }
    };
}

id_newtype!(FoodId, "f", 6);
id_newtype!(RestaurantId, "r", 5);

/// Opaque user identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(s: impl Into<String>) -> Self {
        UserId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
