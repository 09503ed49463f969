//! Per-session conversation state machine.
//!
//! [`Dialog::step`] is a pure function of (state, parse, turn, services):
//! it never writes. Writes come back as [`Command`]s that the caller runs
//! after persisting the new state.
//!
//! Transition table (context × parse → context):
//!
//! | context                  | parse                                   | next                       |
//! |--------------------------|-----------------------------------------|----------------------------|
//! | any, idle > window       | —                                       | treated as `none`          |
//! | none                     | log_food, food + meal resolved          | none (+ log command)       |
//! | none                     | log_food, no exact match, fuzzy hits    | awaiting_food_selection    |
//! | none                     | log_food, food resolved, meal missing   | awaiting_meal_occasion     |
//! | none                     | set_goal without target                 | awaiting_goal_target       |
//! | none                     | delete_entry matching an entry          | confirming_delete          |
//! | none                     | other intents                           | none                       |
//! | awaiting_meal_occasion   | carries a meal (not a new food log)     | none (+ log command)       |
//! | awaiting_food_selection  | option i in range                       | none or awaiting_meal      |
//! | awaiting_food_selection  | option out of range / unclear           | unchanged (re-prompt)      |
//! | awaiting_food_selection  | "none of these"                         | none or awaiting_meal (raw)|
//! | awaiting_goal_target     | carries a number                        | none (+ goal command)      |
//! | confirming_delete        | yes / no                                | none (+ delete on yes)     |
//! | any awaiting context     | a different recognised intent           | routed as from `none`      |
//! | any awaiting context     | anything else                           | unchanged (re-prompt)      |

mod templates;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

pub use templates::{ResponseTemplate, Templates, DEFAULT_TEMPLATES, MAX_CHIPS};

use crate::error::{Error, Result};
use crate::goals::{Goal, GoalTemplate, ProgressReport};
use crate::graph::{FoodEntity, KnowledgeGraph, Source};
use crate::journal::{EntryPatch, FoodLogEntry, JournalEntry};
use crate::nlu::{Intent, ParseResult, SlotKind, SlotSet};
use crate::recommender::{Reason, ScoredCandidate};
use crate::text::normalize_name;
use crate::types::{CategoryLabel, Direction, FoodId, MealOccasion, Period, UserId};
use crate::users::UserProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveContext {
    #[default]
    None,
    AwaitingMealOccasion,
    AwaitingFoodSelection,
    AwaitingGoalTarget,
    ConfirmingDelete,
}

impl ActiveContext {
    pub const ALL: [ActiveContext; 5] = [
        ActiveContext::None,
        ActiveContext::AwaitingMealOccasion,
        ActiveContext::AwaitingFoodSelection,
        ActiveContext::AwaitingGoalTarget,
        ActiveContext::ConfirmingDelete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActiveContext::None => "none",
            ActiveContext::AwaitingMealOccasion => "awaiting_meal_occasion",
            ActiveContext::AwaitingFoodSelection => "awaiting_food_selection",
            ActiveContext::AwaitingGoalTarget => "awaiting_goal_target",
            ActiveContext::ConfirmingDelete => "confirming_delete",
        }
    }
}

/// A food chosen for a pending log: a graph food, or raw text if unresolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingFood {
    pub food_id: Option<FoodId>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogState {
    pub session_id: String,
    pub user_id: UserId,
    pub active_context: ActiveContext,
    #[serde(default)]
    pub pending_slots: SlotSet,
    /// Intent whose fulfilment is waiting on the active context.
    #[serde(default)]
    pub pending_intent: Option<Intent>,
    #[serde(default)]
    pub pending_food: Option<PendingFood>,
    #[serde(default)]
    pub candidate_list: Vec<FoodId>,
    /// Entry awaiting delete confirmation.
    #[serde(default)]
    pub pending_entry: Option<String>,
    #[serde(default)]
    pub last_prompt_id: Option<String>,
    pub updated_at: DateTime<Utc>,
}

impl DialogState {
    pub fn new(session_id: impl Into<String>, user_id: UserId, now: DateTime<Utc>) -> Self {
        DialogState {
            session_id: session_id.into(),
            user_id,
            active_context: ActiveContext::None,
            pending_slots: SlotSet::default(),
            pending_intent: None,
            pending_food: None,
            candidate_list: Vec::new(),
            pending_entry: None,
            last_prompt_id: None,
            updated_at: now,
        }
    }

    fn clear(&mut self) {
        self.active_context = ActiveContext::None;
        self.pending_slots = SlotSet::default();
        self.pending_intent = None;
        self.pending_food = None;
        self.candidate_list.clear();
        self.pending_entry = None;
    }

    /// Checks the structural invariants tying context to pending data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("dialog state: {m}")));
        let ctx = self.active_context;
        if self.candidate_list.is_empty() == (ctx == ActiveContext::AwaitingFoodSelection) {
            return bad("candidate list must be non-empty exactly while awaiting a selection");
        }
        if self.candidate_list.len() > DialogConfig::default().max_candidates.max(15) {
            return bad("too many candidates");
        }
        if self.pending_entry.is_some() != (ctx == ActiveContext::ConfirmingDelete) {
            return bad("pending entry must be set exactly while confirming a delete");
        }
        match ctx {
            ActiveContext::None => {
                if self.pending_intent.is_some() || self.pending_food.is_some() || !self.pending_slots.is_empty() {
                    return bad("idle context carries pending data");
                }
            }
            ActiveContext::AwaitingMealOccasion => {
                if self.pending_intent != Some(Intent::LogFood) || self.pending_food.is_none() {
                    return bad("awaiting a meal without a pending food log");
                }
            }
            ActiveContext::AwaitingFoodSelection => {
                if self.pending_intent != Some(Intent::LogFood) || self.pending_slots.food_name.is_none() {
                    return bad("awaiting a selection without a pending food log");
                }
            }
            ActiveContext::AwaitingGoalTarget => {
                if self.pending_intent != Some(Intent::SetGoal) || self.pending_slots.goal_type.is_none() {
                    return bad("awaiting a target without a pending goal");
                }
            }
            ActiveContext::ConfirmingDelete => {
                if self.pending_intent != Some(Intent::DeleteEntry) {
                    return bad("confirming a delete without a pending delete");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CardAction {
    /// Sends a select_option turn with this 1-based index.
    SelectOption { option_index: u32 },
    /// Informational link to a food.
    Food { food_id: FoodId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub title: String,
    pub subtitle: String,
    pub action: CardAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotResponse {
    pub text: String,
    #[serde(default)]
    pub chips: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cards: Vec<Card>,
    pub end_of_turn: bool,
}

impl BotResponse {
    fn with_cards(mut self, cards: Vec<Card>) -> Self {
        self.cards = cards;
        self
    }

    fn with_chips(mut self, chips: Vec<String>) -> Self {
        self.chips = chips;
        self.chips.truncate(MAX_CHIPS);
        self
    }
}

/// A write for the caller to run after persisting the new dialog state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    LogFood {
        turn_id: String,
        food_id: Option<FoodId>,
        raw_name: String,
        meal_occasion: MealOccasion,
        servings: u32,
        logged_at: DateTime<Utc>,
    },
    LogWater {
        turn_id: String,
        glasses: u32,
        logged_at: DateTime<Utc>,
    },
    EditEntry {
        turn_id: String,
        entry_id: String,
        patch: EntryPatch,
    },
    DeleteEntry {
        turn_id: String,
        entry_id: String,
    },
    SetGoal {
        turn_id: String,
        template: GoalTemplate,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub turn_id: String,
    pub now: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: DialogState,
    pub response: BotResponse,
    pub commands: Vec<Command>,
}

/// Read-only views of the services the dialog consults.
pub trait DialogServices {
    fn graph(&self) -> &KnowledgeGraph;
    fn entries(&self, user: &UserProfile, start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Vec<JournalEntry>>;
    fn entry(&self, user: &UserProfile, entry_id: &str) -> Result<Option<JournalEntry>>;
    fn progress(&self, user: &UserProfile, now: DateTime<Utc>) -> Result<Vec<ProgressReport>>;
    fn active_goal(&self, user: &UserId, label: CategoryLabel) -> Result<Option<Goal>>;
    fn default_goal(&self, label: CategoryLabel) -> Option<GoalTemplate>;
    fn recommend(&self, user: &UserProfile, occasion: MealOccasion, now: DateTime<Utc>)
        -> Result<Vec<ScoredCandidate>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogConfig {
    pub idle_minutes: i64,
    pub max_candidates: usize,
}

impl Default for DialogConfig {
    fn default() -> Self {
        DialogConfig {
            idle_minutes: 10,
            max_candidates: 15,
        }
    }
}

/// Template ids the dialog and scheduler render.
pub const REQUIRED_TEMPLATES: &[&str] = &[
    "greet",
    "help",
    "fallback",
    "apology",
    "ask_food",
    "ask_meal",
    "choose_food",
    "choose_food_retry",
    "log_confirm",
    "log_confirm_unresolved",
    "water_confirm",
    "journal_list",
    "journal_empty",
    "edit_confirm",
    "edit_what",
    "entry_not_found",
    "delete_ask",
    "delete_done",
    "delete_cancelled",
    "ask_goal_type",
    "ask_goal_target",
    "goal_set",
    "goal_progress",
    "goal_summary",
    "goal_none",
    "recommend",
    "recommend_empty",
    "nothing_to_select",
    "prompt_log_reminder",
    "prompt_goal_gap",
    "prompt_midweek_fish",
    "prompt_meal_recommendation",
    "prompt_weekly_report",
];

pub struct Dialog {
    templates: Templates,
    config: DialogConfig,
}

enum Resolution<'g> {
    Exact(&'g FoodEntity),
    Candidates(Vec<&'g FoodEntity>),
    NoMatch,
}

/// Typical local time for back-dated meals.
fn meal_time(meal: MealOccasion) -> NaiveTime {
    let (h, m) = match meal {
        MealOccasion::Breakfast => (8, 0),
        MealOccasion::Lunch => (12, 30),
        MealOccasion::Snack => (15, 30),
        MealOccasion::Dinner => (19, 0),
    };
    NaiveTime::from_hms_opt(h, m, 0).expect("valid time")
}

pub fn day_phrase(day: NaiveDate, today: NaiveDate) -> String {
    if day == today {
        "today".into()
    } else if Some(day) == today.pred_opt() {
        "yesterday".into()
    } else {
        day.format("%a %-d %b").to_string()
    }
}

/// Card subtitle: source, first restaurant and price when known.
pub fn food_subtitle(graph: &KnowledgeGraph, food: &FoodEntity) -> String {
    let mut parts = vec![match food.source {
        Source::Generic => "generic".to_string(),
        Source::Packaged => "packaged".to_string(),
        Source::Restaurant => graph
            .restaurants_for_food(food.id)
            .first()
            .and_then(|r| graph.restaurant(*r))
            .map(|r| r.name.clone())
            .unwrap_or_else(|| "restaurant".into()),
    }];
    if let Some(p) = food.price {
        parts.push(format!("${p:.2}"));
    }
    parts.join(" · ")
}

fn reason_text(r: Reason) -> &'static str {
    match r {
        Reason::Frequent => "you often have this",
        Reason::Recent => "you had this recently",
        Reason::Popular => "popular with others",
        Reason::Similar => "similar to your favourite",
    }
}

impl Dialog {
    pub fn new(templates: Templates, config: DialogConfig) -> Result<Dialog> {
        templates.require(REQUIRED_TEMPLATES)?;
        if config.max_candidates == 0 || config.max_candidates > 15 {
            return Err(Error::Config("max_candidates must be within 1..=15".into()));
        }
        Ok(Dialog { templates, config })
    }

    pub fn shipped() -> Dialog {
        Dialog::new(Templates::shipped(), DialogConfig::default()).expect("shipped templates are complete")
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn config(&self) -> &DialogConfig {
        &self.config
    }

    pub fn is_expired(&self, state: &DialogState, now: DateTime<Utc>) -> bool {
        now - state.updated_at > Duration::minutes(self.config.idle_minutes)
    }

    /// The intent and slot a bare follow-up answer would fill, if any.
    pub fn expectation(&self, state: &DialogState, now: DateTime<Utc>) -> Option<(Intent, SlotKind)> {
        if self.is_expired(state, now) {
            return None;
        }
        match state.active_context {
            ActiveContext::AwaitingMealOccasion => Some((Intent::LogFood, SlotKind::Meal)),
            ActiveContext::AwaitingFoodSelection => Some((Intent::SelectOption, SlotKind::Option)),
            ActiveContext::AwaitingGoalTarget => Some((Intent::SetGoal, SlotKind::Target)),
            ActiveContext::None | ActiveContext::ConfirmingDelete => None,
        }
    }

    pub fn render(&self, id: &str, bindings: &[(&str, String)]) -> Result<BotResponse> {
        self.templates.render(id, bindings)
    }

    pub fn step(
        &self,
        state: &DialogState,
        parse: &ParseResult,
        turn: &Turn,
        user: &UserProfile,
        svc: &dyn DialogServices,
    ) -> Result<StepOutcome> {
        // A blank food name is no food name.
        let mut parse = parse.clone();
        parse.slots.food_name = parse
            .slots
            .food_name
            .take()
            .map(|n| n.trim().to_owned())
            .filter(|n| !n.is_empty());
        let parse = &parse;
        let mut st = state.clone();
        if self.is_expired(&st, turn.now) {
            st.clear();
        }
        let fresh = !matches!(parse.intent, Intent::Unknown | Intent::SelectOption);
        let mut cx = Cx {
            dialog: self,
            turn,
            user,
            svc,
            commands: Vec::new(),
        };
        let response = match st.active_context {
            ActiveContext::None => {
                if parse.intent == Intent::Unknown {
                    // Nothing to do: answer with help, leave the state alone.
                    return Ok(StepOutcome {
                        state: state.clone(),
                        response: self.render("fallback", &[])?,
                        commands: Vec::new(),
                    });
                }
                cx.route(&mut st, parse)?
            }
            ActiveContext::AwaitingMealOccasion => {
                let new_log = parse.intent == Intent::LogFood && parse.slots.food_name.is_some();
                match parse.slots.meal_occasion {
                    Some(meal)
                        if !new_log
                            && matches!(parse.intent, Intent::LogFood | Intent::Unknown | Intent::SelectOption) =>
                    {
                        st.pending_slots.meal_occasion = Some(meal);
                        cx.finish_log(&mut st)?
                    }
                    _ if fresh => {
                        st.clear();
                        cx.route(&mut st, parse)?
                    }
                    _ => cx.ask_meal(&st)?,
                }
            }
            ActiveContext::AwaitingFoodSelection => {
                let pick = parse.slots.option_index.filter(|_| !fresh);
                if let Some(i) = pick {
                    match st.candidate_list.get((i as usize).wrapping_sub(1)) {
                        Some(&id) => {
                            let food = svc
                                .graph()
                                .food(id)
                                .ok_or_else(|| Error::not_found(format!("food {id}")))?;
                            st.pending_food = Some(PendingFood {
                                food_id: Some(id),
                                name: food.canonical_name.clone(),
                            });
                            st.candidate_list.clear();
                            cx.continue_log(&mut st)?
                        }
                        None => cx.choose_retry(&st)?,
                    }
                } else if parse.affirmation == Some(false) && !fresh {
                    let raw = st.pending_slots.food_name.clone().unwrap_or_default();
                    st.pending_food = Some(PendingFood {
                        food_id: None,
                        name: raw,
                    });
                    st.candidate_list.clear();
                    cx.continue_log(&mut st)?
                } else if fresh {
                    st.clear();
                    cx.route(&mut st, parse)?
                } else {
                    cx.choose_retry(&st)?
                }
            }
            ActiveContext::AwaitingGoalTarget => {
                let target = match parse.intent {
                    Intent::SetGoal
                        if parse.slots.goal_type.is_none() || parse.slots.goal_type == st.pending_slots.goal_type =>
                    {
                        parse.slots.target
                    }
                    Intent::Unknown => parse.slots.target,
                    Intent::SelectOption => parse.slots.option_index.or(parse.slots.target),
                    _ => None,
                };
                match target {
                    Some(t) => {
                        st.pending_slots.target = Some(t);
                        if parse.slots.period.is_some() {
                            st.pending_slots.period = parse.slots.period;
                        }
                        cx.finish_goal(&mut st)?
                    }
                    None if fresh => {
                        st.clear();
                        cx.route(&mut st, parse)?
                    }
                    None => cx.ask_target(&st)?,
                }
            }
            ActiveContext::ConfirmingDelete => match parse.affirmation {
                Some(true) if !fresh || parse.intent == Intent::DeleteEntry && parse.slots.is_empty() => {
                    let resp = cx.confirm_delete(&st)?;
                    st.clear();
                    resp
                }
                Some(false) if !fresh => {
                    st.clear();
                    self.render("delete_cancelled", &[])?
                }
                _ if fresh => {
                    st.clear();
                    cx.route(&mut st, parse)?
                }
                _ => cx.ask_delete(&st)?,
            },
        };
        st.updated_at = turn.now;
        Ok(StepOutcome {
            state: st,
            response,
            commands: cx.commands,
        })
    }
}

/// Per-step context.
struct Cx<'a> {
    dialog: &'a Dialog,
    turn: &'a Turn,
    user: &'a UserProfile,
    svc: &'a dyn DialogServices,
    commands: Vec<Command>,
}

impl Cx<'_> {
    fn render(&self, id: &str, bindings: &[(&str, String)]) -> Result<BotResponse> {
        self.dialog.render(id, bindings)
    }

    fn today(&self) -> NaiveDate {
        self.user.local_day(self.turn.now)
    }

    fn route(&mut self, st: &mut DialogState, parse: &ParseResult) -> Result<BotResponse> {
        debug_assert_eq!(st.active_context, ActiveContext::None);
        let s = &parse.slots;
        match parse.intent {
            Intent::LogFood => self.start_log(st, s),
            Intent::LogWater => self.log_water(s),
            Intent::QueryJournal => self.query_journal(s),
            Intent::EditEntry => self.edit_entry(s),
            Intent::DeleteEntry => self.start_delete(st, s),
            Intent::SetGoal => self.start_goal(st, s),
            Intent::QueryGoal => self.query_goal(s),
            Intent::RequestRecommendation => self.recommend(s),
            Intent::SelectOption => self.render("nothing_to_select", &[]),
            Intent::Greet => self.render("greet", &[("name", self.user.display_name.clone())]),
            Intent::Help => self.render("help", &[]),
            Intent::Unknown => self.render("fallback", &[]),
        }
    }

    fn resolve<'g>(&self, graph: &'g KnowledgeGraph, name: &str) -> Resolution<'g> {
        if let Some(f) = graph.exact_match(name) {
            return Resolution::Exact(f);
        }
        let norm = normalize_name(name);
        for suffix in ["es", "s"] {
            if let Some(stem) = norm.strip_suffix(suffix).filter(|s| s.len() > 2) {
                if let Some(f) = graph.exact_match(stem) {
                    return Resolution::Exact(f);
                }
            }
        }
        let hits = graph.search_food(name, self.dialog.config.max_candidates);
        if hits.is_empty() {
            Resolution::NoMatch
        } else {
            Resolution::Candidates(hits.into_iter().map(|h| h.food).collect())
        }
    }

    fn start_log(&mut self, st: &mut DialogState, s: &SlotSet) -> Result<BotResponse> {
        let Some(name) = s.food_name.clone() else {
            return self.render("ask_food", &[]);
        };
        st.pending_intent = Some(Intent::LogFood);
        st.pending_slots = SlotSet {
            food_name: Some(name.clone()),
            meal_occasion: s.meal_occasion,
            quantity: s.quantity,
            date_ref: s.date_ref,
            ..SlotSet::default()
        };
        let graph = self.svc.graph();
        match self.resolve(graph, &name) {
            Resolution::Exact(f) => {
                st.pending_food = Some(PendingFood {
                    food_id: Some(f.id),
                    name: f.canonical_name.clone(),
                });
                self.continue_log(st)
            }
            Resolution::Candidates(list) => {
                st.active_context = ActiveContext::AwaitingFoodSelection;
                st.candidate_list = list.iter().map(|f| f.id).collect();
                self.choose(st, &name)
            }
            Resolution::NoMatch => {
                st.pending_food = Some(PendingFood { food_id: None, name });
                self.continue_log(st)
            }
        }
    }

    fn choose(&self, st: &DialogState, query: &str) -> Result<BotResponse> {
        let graph = self.svc.graph();
        let cards = st
            .candidate_list
            .iter()
            .enumerate()
            .filter_map(|(i, id)| graph.food(*id).map(|f| (i, f)))
            .map(|(i, f)| Card {
                title: format!("{}. {}", i + 1, f.canonical_name),
                subtitle: food_subtitle(graph, f),
                action: CardAction::SelectOption {
                    option_index: i as u32 + 1,
                },
            })
            .collect();
        Ok(self
            .render(
                "choose_food",
                &[
                    ("query", query.to_string()),
                    ("count", st.candidate_list.len().to_string()),
                ],
            )?
            .with_cards(cards))
    }

    fn choose_retry(&self, st: &DialogState) -> Result<BotResponse> {
        let query = st.pending_slots.food_name.clone().unwrap_or_default();
        let full = self.choose(st, &query)?;
        Ok(self
            .render("choose_food_retry", &[("count", st.candidate_list.len().to_string())])?
            .with_cards(full.cards))
    }

    /// Food is settled; ask for the meal or finish.
    fn continue_log(&mut self, st: &mut DialogState) -> Result<BotResponse> {
        if st.pending_slots.meal_occasion.is_some() {
            return self.finish_log(st);
        }
        st.active_context = ActiveContext::AwaitingMealOccasion;
        self.ask_meal(st)
    }

    fn ask_meal(&self, st: &DialogState) -> Result<BotResponse> {
        let food = st.pending_food.as_ref().map(|p| p.name.clone()).unwrap_or_default();
        self.render("ask_meal", &[("food", food)])
    }

    fn finish_log(&mut self, st: &mut DialogState) -> Result<BotResponse> {
        let food = st.pending_food.clone().expect("food settled before meal");
        let meal = st.pending_slots.meal_occasion.expect("meal present");
        let servings = st.pending_slots.quantity.unwrap_or(1).max(1);
        let logged_at = self.when(st.pending_slots.date_ref.map(|d| d.resolve(self.today())), meal);
        self.commands.push(Command::LogFood {
            turn_id: self.turn.turn_id.clone(),
            food_id: food.food_id,
            raw_name: food.name.clone(),
            meal_occasion: meal,
            servings,
            logged_at,
        });
        st.clear();
        let day = day_phrase(self.user.local_day(logged_at), self.today());
        let id = if food.food_id.is_some() {
            "log_confirm"
        } else {
            "log_confirm_unresolved"
        };
        self.render(
            id,
            &[
                ("food", food.name),
                ("meal", meal.to_string()),
                ("day", day),
                ("servings", servings.to_string()),
            ],
        )
    }

    /// Now for today's logs; a typical meal time for earlier days.
    fn when(&self, day: Option<NaiveDate>, meal: MealOccasion) -> DateTime<Utc> {
        match day {
            Some(d) if d < self.today() => self.user.at_local(d, meal_time(meal)).min(self.turn.now),
            _ => self.turn.now,
        }
    }

    fn log_water(&mut self, s: &SlotSet) -> Result<BotResponse> {
        let glasses = s.quantity.unwrap_or(1).max(1);
        let day = s.date_ref.map(|d| d.resolve(self.today())).unwrap_or(self.today());
        let logged_at = if day < self.today() {
            self.user
                .at_local(day, NaiveTime::from_hms_opt(12, 0, 0).expect("noon"))
        } else {
            self.turn.now
        };
        let (start, end) = self.user.day_window(day);
        let before: u32 = self
            .svc
            .entries(self.user, start, end.min(self.turn.now))?
            .iter()
            .filter_map(JournalEntry::as_water)
            .map(|w| w.glasses)
            .sum();
        self.commands.push(Command::LogWater {
            turn_id: self.turn.turn_id.clone(),
            glasses,
            logged_at,
        });
        self.render(
            "water_confirm",
            &[
                ("glasses", glasses.to_string()),
                ("total", (before + glasses).to_string()),
            ],
        )
    }

    fn day_entries(&self, day: NaiveDate) -> Result<Vec<JournalEntry>> {
        let (start, end) = self.user.day_window(day);
        self.svc.entries(self.user, start, end.min(self.turn.now))
    }

    fn scope(&self, day: NaiveDate, meal: Option<MealOccasion>) -> String {
        let d = match day_phrase(day, self.today()) {
            p if p == "today" || p == "yesterday" => p,
            p => format!("on {p}"),
        };
        match meal {
            Some(m) => format!("for {m} {d}"),
            None => d,
        }
    }

    fn query_journal(&mut self, s: &SlotSet) -> Result<BotResponse> {
        let day = s.date_ref.map(|d| d.resolve(self.today())).unwrap_or(self.today());
        let offset = self.user.offset();
        let lines: Vec<String> = self
            .day_entries(day)?
            .iter()
            .filter(|e| match (e, s.meal_occasion) {
                (_, None) => true,
                (JournalEntry::Food(f), Some(m)) => f.meal_occasion == m,
                (JournalEntry::Water(_), Some(_)) => false,
            })
            .map(|e| {
                let t = e.logged_at().with_timezone(&offset).format("%H:%M");
                match e {
                    JournalEntry::Food(f) => format!("• {t} {}: {} ×{}", f.meal_occasion, f.raw_name, f.servings),
                    JournalEntry::Water(w) => format!("• {t} water: {} glass(es)", w.glasses),
                }
            })
            .collect();
        let scope = self.scope(day, s.meal_occasion);
        if lines.is_empty() {
            self.render("journal_empty", &[("scope", scope)])
        } else {
            self.render("journal_list", &[("scope", scope), ("items", lines.join("\n"))])
        }
    }

    /// Latest food entry on the referenced day matching the food name and,
    /// if given, the meal.
    fn find_entry(&self, s: &SlotSet, meal_filter: Option<MealOccasion>) -> Result<Option<FoodLogEntry>> {
        let day = s.date_ref.map(|d| d.resolve(self.today())).unwrap_or(self.today());
        let name = s.food_name.as_deref().map(normalize_name);
        let graph = self.svc.graph();
        Ok(self
            .day_entries(day)?
            .into_iter()
            .filter_map(|e| match e {
                JournalEntry::Food(f) => Some(f),
                JournalEntry::Water(_) => None,
            })
            .filter(|f| meal_filter.is_none_or(|m| f.meal_occasion == m))
            .rfind(|f| match &name {
                None => true,
                Some(n) => {
                    let raw = normalize_name(&f.raw_name);
                    let canon = f
                        .food_id
                        .and_then(|id| graph.food(id))
                        .map(|g| g.canonical_name.as_str());
                    raw.contains(n.as_str())
                        || n.contains(raw.as_str())
                        || canon.is_some_and(|c| c.contains(n.as_str()))
                }
            }))
    }

    fn not_found(&self, s: &SlotSet) -> Result<BotResponse> {
        let day = s.date_ref.map(|d| d.resolve(self.today())).unwrap_or(self.today());
        self.render("entry_not_found", &[("scope", self.scope(day, None))])
    }

    fn edit_entry(&mut self, s: &SlotSet) -> Result<BotResponse> {
        let Some(entry) = self.find_entry(s, None)? else {
            return self.not_found(s);
        };
        let servings = s.quantity.filter(|q| *q >= 1);
        if s.meal_occasion.is_none() && servings.is_none() {
            return self.render("edit_what", &[("food", entry.raw_name.clone())]);
        }
        let patch = EntryPatch {
            meal_occasion: s.meal_occasion,
            servings,
            ..EntryPatch::default()
        };
        self.commands.push(Command::EditEntry {
            turn_id: self.turn.turn_id.clone(),
            entry_id: entry.entry_id.clone(),
            patch,
        });
        self.render(
            "edit_confirm",
            &[
                ("food", entry.raw_name.clone()),
                ("meal", s.meal_occasion.unwrap_or(entry.meal_occasion).to_string()),
                ("servings", servings.unwrap_or(entry.servings).to_string()),
            ],
        )
    }

    fn start_delete(&mut self, st: &mut DialogState, s: &SlotSet) -> Result<BotResponse> {
        let Some(entry) = self.find_entry(s, s.meal_occasion)? else {
            return self.not_found(s);
        };
        st.active_context = ActiveContext::ConfirmingDelete;
        st.pending_intent = Some(Intent::DeleteEntry);
        st.pending_entry = Some(entry.entry_id.clone());
        self.delete_prompt(&entry)
    }

    fn delete_prompt(&self, entry: &FoodLogEntry) -> Result<BotResponse> {
        let day = day_phrase(self.user.local_day(entry.logged_at), self.today());
        self.render(
            "delete_ask",
            &[
                ("food", entry.raw_name.clone()),
                ("meal", entry.meal_occasion.to_string()),
                ("day", day),
            ],
        )
    }

    fn pending_entry(&self, st: &DialogState) -> Result<Option<FoodLogEntry>> {
        let Some(id) = st.pending_entry.as_deref() else {
            return Ok(None);
        };
        Ok(self.svc.entry(self.user, id)?.and_then(|e| e.as_food().cloned()))
    }

    fn ask_delete(&self, st: &DialogState) -> Result<BotResponse> {
        match self.pending_entry(st)? {
            Some(f) => self.delete_prompt(&f),
            None => self.render("entry_not_found", &[("scope", "any more".into())]),
        }
    }

    fn confirm_delete(&mut self, st: &DialogState) -> Result<BotResponse> {
        let Some(f) = self.pending_entry(st)? else {
            // Already gone: nothing to delete.
            return self.render("entry_not_found", &[("scope", "any more".into())]);
        };
        self.commands.push(Command::DeleteEntry {
            turn_id: self.turn.turn_id.clone(),
            entry_id: f.entry_id.clone(),
        });
        self.render(
            "delete_done",
            &[("food", f.raw_name.clone()), ("meal", f.meal_occasion.to_string())],
        )
    }

    fn start_goal(&mut self, st: &mut DialogState, s: &SlotSet) -> Result<BotResponse> {
        let Some(label) = s.goal_type.filter(|l| *l != CategoryLabel::Other) else {
            return self.render("ask_goal_type", &[]);
        };
        st.pending_intent = Some(Intent::SetGoal);
        st.pending_slots = SlotSet {
            goal_type: Some(label),
            target: s.target,
            period: s.period,
            ..SlotSet::default()
        };
        if s.target.is_none() {
            st.active_context = ActiveContext::AwaitingGoalTarget;
            return self.ask_target(st);
        }
        self.finish_goal(st)
    }

    fn goal_shape(&self, label: CategoryLabel, period: Option<Period>) -> Result<(Period, Direction)> {
        let existing = self.svc.active_goal(&self.user.user_id, label)?.map(|g| g.template());
        let base = existing.or_else(|| self.svc.default_goal(label));
        let period = if label == CategoryLabel::Water {
            Period::Daily
        } else {
            period.or(base.map(|b| b.period)).unwrap_or(Period::Weekly)
        };
        let direction = base.map(|b| b.direction).unwrap_or(Direction::AtLeast);
        Ok((period, direction))
    }

    fn ask_target(&self, st: &DialogState) -> Result<BotResponse> {
        let label = st.pending_slots.goal_type.expect("validated");
        let (period, _) = self.goal_shape(label, st.pending_slots.period)?;
        self.render(
            "ask_goal_target",
            &[
                ("label", label.display_name().into()),
                ("unit", period.per_unit().into()),
            ],
        )
    }

    fn finish_goal(&mut self, st: &mut DialogState) -> Result<BotResponse> {
        let label = st.pending_slots.goal_type.expect("validated");
        let target = st.pending_slots.target.expect("target present").max(1);
        let (period, direction) = self.goal_shape(label, st.pending_slots.period)?;
        let template = GoalTemplate {
            goal_type: label,
            target,
            period,
            direction,
        };
        self.commands.push(Command::SetGoal {
            turn_id: self.turn.turn_id.clone(),
            template,
        });
        st.clear();
        self.render(
            "goal_set",
            &[
                ("label", label.display_name().into()),
                ("direction", direction_phrase(direction).into()),
                ("target", target.to_string()),
                ("unit", period.per_unit().into()),
            ],
        )
    }

    fn query_goal(&mut self, s: &SlotSet) -> Result<BotResponse> {
        let reports = self.svc.progress(self.user, self.turn.now)?;
        match s.goal_type {
            Some(label) => match reports.iter().find(|r| r.goal_type == label) {
                Some(r) => self.render(
                    "goal_progress",
                    &[
                        ("label", label.display_name().into()),
                        ("current", r.current.to_string()),
                        ("target", r.target.to_string()),
                        ("unit", r.period.per_unit().into()),
                        ("status", status_phrase(r)),
                    ],
                ),
                None => self.render("goal_none", &[("label", label.display_name().into())]),
            },
            None => {
                let items = if reports.is_empty() {
                    "No active goals yet.".to_string()
                } else {
                    reports.iter().map(progress_line).collect::<Vec<_>>().join("\n")
                };
                self.render("goal_summary", &[("items", items)])
            }
        }
    }

    fn recommend(&mut self, s: &SlotSet) -> Result<BotResponse> {
        let meal = s.meal_occasion.unwrap_or_else(|| {
            use chrono::Timelike;
            MealOccasion::for_local_hour(self.user.local(self.turn.now).hour())
        });
        let recs = self.svc.recommend(self.user, meal, self.turn.now)?;
        if recs.is_empty() {
            return self.render("recommend_empty", &[("meal", meal.to_string())]);
        }
        Ok(self
            .render("recommend", &[("meal", meal.to_string())])?
            .with_cards(recommendation_cards(self.svc.graph(), &recs)))
    }
}

pub fn recommendation_cards(graph: &KnowledgeGraph, recs: &[ScoredCandidate]) -> Vec<Card> {
    recs.iter()
        .filter_map(|c| graph.food(c.food_id).map(|f| (c, f)))
        .map(|(c, f)| Card {
            title: f.canonical_name.clone(),
            subtitle: format!("{} · {}", reason_text(c.reason), food_subtitle(graph, f)),
            action: CardAction::Food { food_id: f.id },
        })
        .collect()
}

pub fn direction_phrase(d: Direction) -> &'static str {
    match d {
        Direction::AtLeast => "at least",
        Direction::AtMost => "at most",
    }
}

fn status_phrase(r: &ProgressReport) -> String {
    match (r.attained, r.direction) {
        (true, Direction::AtLeast) => "goal reached".into(),
        (true, Direction::AtMost) => "within your limit".into(),
        (false, Direction::AtLeast) => format!("{} to go", r.gap),
        (false, Direction::AtMost) => format!("{} over the limit", r.gap),
    }
}

pub fn progress_line(r: &ProgressReport) -> String {
    format!(
        "• {}: {} of {} {} per {} ({})",
        r.goal_type.display_name(),
        r.current,
        direction_phrase(r.direction),
        r.target,
        r.period.per_unit(),
        status_phrase(r)
    )
}

impl BotResponse {
    /// Replaces chips, capped at [`MAX_CHIPS`].
    pub fn chips(self, chips: Vec<String>) -> Self {
        self.with_chips(chips)
    }

    pub fn cards(self, cards: Vec<Card>) -> Self {
        self.with_cards(cards)
    }
}
