use chrono::Duration;
use proptest::prelude::*;

use super::*;
use crate::clock::Clock;
use crate::fixtures::{ts, Env};
use crate::goals::{default_goals, GoalTemplate, Goals};
use crate::journal::Journal;
use crate::recommender::RecommenderConfig;
use crate::users::create_user;

const FOODS: [&str; 6] = [
    "laksa",
    "salmon sashimi",
    "apple",
    "chicken rice",
    "fish soup",
    "kaya toast",
];

/// Tuesday 2024-01-09 00:00 at +08:00.
const START: &str = "2024-01-08T16:00:00Z";

struct Sched {
    env: Env,
    svc: Services,
    sched: Scheduler,
    turn: std::cell::Cell<u32>,
}

impl Sched {
    fn new(config: SchedulerConfig) -> Sched {
        let env = Env::new(&FOODS, START);
        let journal = Arc::new(Journal::new(env.store.clone(), env.graph.clone(), env.clock()));
        let goals = Arc::new(Goals::new(env.store.clone(), journal.clone(), default_goals()));
        let svc = Services {
            graph: env.graph.clone(),
            journal,
            goals,
            recommender: RecommenderConfig::default(),
        };
        let sched = Scheduler::new(env.store.clone(), svc.clone(), Arc::new(Dialog::shipped()), config).unwrap();
        sched.start(env.clock.now()).unwrap();
        Sched {
            env,
            svc,
            sched,
            turn: std::cell::Cell::new(0),
        }
    }

    fn shipped() -> Sched {
        Sched::new(SchedulerConfig::shipped())
    }

    fn user(&self, id: &str, goals: &[GoalTemplate]) -> UserProfile {
        let u = UserProfile::new(UserId::new(id), id, 480, self.env.clock.now()).unwrap();
        create_user(&self.env.store, &u).unwrap();
        for g in goals {
            self.svc.goals.set_goal(&u.user_id, *g, self.env.clock.now()).unwrap();
        }
        u
    }

    /// Local time on the same local day as START plus `days`.
    fn at(&self, days: i64, hh: u32, mm: u32) -> DateTime<Utc> {
        let u = UserProfile::new(UserId::new("x"), "x", 480, ts(START)).unwrap();
        u.at_local(
            u.local_day(ts(START)) + Duration::days(days),
            NaiveTime::from_hms_opt(hh, mm, 0).unwrap(),
        )
    }

    fn eat(&self, u: &UserProfile, name: &str, meal: MealOccasion, at: DateTime<Utc>) {
        self.env.clock.set(at.max(self.env.clock.now()));
        let id = self.env.graph.exact_match(name).map(|f| f.id);
        self.turn.set(self.turn.get() + 1);
        self.svc
            .journal
            .log_food(u, id, name, meal, 1, at, &format!("t{}", self.turn.get()))
            .unwrap();
    }

    fn drink(&self, u: &UserProfile, glasses: u32, at: DateTime<Utc>) {
        self.env.clock.set(at.max(self.env.clock.now()));
        self.turn.set(self.turn.get() + 1);
        self.svc
            .journal
            .log_water(u, glasses, at, &format!("t{}", self.turn.get()))
            .unwrap();
    }

    fn tick_to(&self, t: DateTime<Utc>) -> Vec<NotificationPrompt> {
        self.env.clock.set(t);
        self.sched.tick(t).unwrap()
    }
}

fn water(target: u32) -> GoalTemplate {
    GoalTemplate {
        goal_type: CategoryLabel::Water,
        target,
        period: Period::Daily,
        direction: Direction::AtLeast,
    }
}

fn fish() -> GoalTemplate {
    default_goals()
        .into_iter()
        .find(|g| g.goal_type == CategoryLabel::Fish)
        .unwrap()
}

fn only(kind: PolicyKind) -> SchedulerConfig {
    let mut c = SchedulerConfig::shipped();
    c.policies.retain(|p| p.kind == kind);
    c
}

fn policies(prompts: &[NotificationPrompt]) -> Vec<&str> {
    prompts.iter().map(|p| p.policy_id.as_str()).collect()
}

#[test]
fn shipped_policies_match_documented_defaults() {
    let c = SchedulerConfig::shipped();
    assert_eq!(c.fatigue_cap, 3);
    let gap = c.policy("goal_gap").unwrap();
    assert_eq!(
        (gap.time, gap.threshold, gap.priority),
        (NaiveTime::from_hms_opt(20, 0, 0).unwrap(), 0.25, 40)
    );
    let mid = c.policy("midweek_fish").unwrap();
    assert_eq!(
        (mid.weekday, mid.time),
        (Some(Weekday::Wed), NaiveTime::from_hms_opt(17, 30, 0).unwrap())
    );
    let lunch = c.policy("lunch_recommendation").unwrap();
    assert_eq!(lunch.time, NaiveTime::from_hms_opt(11, 0, 0).unwrap());
    let order: Vec<i32> = [
        "weekly_report",
        "goal_gap",
        "midweek_fish",
        "log_reminder",
        "lunch_recommendation",
    ]
    .iter()
    .map(|id| c.policy(id).unwrap().priority)
    .collect();
    assert!(order.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn bad_policy_files_are_rejected() {
    let base = "[[policy]]\npolicy_id = \"a\"\nkind = \"goal_gap\"\ntime = \"20:00\"\npriority = 1\n";
    assert!(SchedulerConfig::parse(base).is_ok());
    assert!(SchedulerConfig::parse(&format!("{base}threshold = 0.0\n")).is_err());
    assert!(SchedulerConfig::parse(&format!("{base}threshold = 1.5\n")).is_err());
    assert!(SchedulerConfig::parse(&base.replace("20:00", "25:00")).is_err());
    assert!(SchedulerConfig::parse(&format!("{base}{base}")).is_err());
    assert!(SchedulerConfig::parse(&base.replace("goal_gap", "meal_recommendation")).is_err());
    assert!(SchedulerConfig::parse(&format!("fatigue_cap = 0\n{base}")).is_err());
    assert!(SchedulerConfig::parse(&format!("{base}weekday = \"someday\"\n")).is_err());
}

#[test]
fn water_far_behind_at_eight_pm_prompts() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    let u = s.user("ann", &[water(6)]);
    s.drink(&u, 1, s.at(0, 9, 0));
    let out = s.tick_to(s.at(0, 20, 0));
    assert_eq!(policies(&out), ["goal_gap"]);
    assert_eq!(out[0].created_at, s.at(0, 20, 0));
    assert!(out[0].payload.text.contains("water"));
}

#[test]
fn water_nearly_met_does_not_prompt() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    let u = s.user("ann", &[water(6)]);
    s.drink(&u, 5, s.at(0, 9, 0));
    // 1/6 ≈ 0.167 is under the 0.25 threshold.
    assert!(s.tick_to(s.at(0, 21, 0)).is_empty());
    let s = Sched::new(only(PolicyKind::GoalGap));
    let u = s.user("ann", &[water(6)]);
    s.drink(&u, 6, s.at(0, 9, 0));
    assert!(s.tick_to(s.at(0, 21, 0)).is_empty());
}

#[test]
fn zero_water_prompts() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    s.user("ann", &[water(6)]);
    assert_eq!(s.tick_to(s.at(0, 20, 0)).len(), 1);
}

#[test]
fn weekly_goals_are_only_due_on_sunday() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    s.user("ann", &[fish()]);
    // Tuesday through Saturday: fish is behind but not yet due.
    assert!(s.tick_to(s.at(4, 23, 0)).is_empty());
    let out = s.tick_to(s.at(5, 23, 0));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].local_day.weekday(), Weekday::Sun);
}

#[test]
fn at_most_goals_prompt_only_when_exceeded() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    let limit = GoalTemplate {
        goal_type: CategoryLabel::FruitVeg,
        target: 1,
        period: Period::Daily,
        direction: Direction::AtMost,
    };
    let u = s.user("ann", &[limit]);
    s.eat(&u, "apple", MealOccasion::Snack, s.at(0, 10, 0));
    assert!(s.tick_to(s.at(0, 21, 0)).is_empty());
    s.eat(&u, "apple", MealOccasion::Snack, s.at(1, 10, 0));
    s.eat(&u, "apple", MealOccasion::Snack, s.at(1, 11, 0));
    assert_eq!(s.tick_to(s.at(1, 21, 0)).len(), 1);
}

#[test]
fn same_policy_same_day_prompts_once() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    s.user("ann", &[water(6)]);
    assert_eq!(s.tick_to(s.at(0, 20, 30)).len(), 1);
    // Rewind the tick origin to replay the same trigger.
    s.env
        .store
        .put(Family::Prompts, LAST_TICK_KEY, &s.at(0, 19, 0))
        .unwrap();
    assert!(s.sched.tick(s.at(0, 20, 30)).unwrap().is_empty());
    assert_eq!(s.sched.prompts_for(&UserId::new("ann")).unwrap().len(), 1);
}

#[test]
fn ticks_never_look_back() {
    let s = Sched::new(only(PolicyKind::GoalGap));
    s.user("ann", &[water(6)]);
    assert!(s.tick_to(s.at(0, 19, 59)).is_empty());
    let out = s.tick_to(s.at(0, 20, 0));
    assert_eq!(out.len(), 1);
    assert!(s.sched.tick(s.at(0, 20, 0)).unwrap().is_empty());
    assert!(s.sched.tick(s.at(0, 19, 0)).unwrap().is_empty());
}

#[test]
fn cap_keeps_the_highest_priorities() {
    let mut c = SchedulerConfig::shipped();
    for p in &mut c.policies {
        p.time = NaiveTime::from_hms_opt(20, 0, 0).unwrap();
        p.enabled = true;
        if p.kind == PolicyKind::WeeklyReport {
            p.weekday = Some(Weekday::Wed);
        }
    }
    let s = Sched::new(c);
    s.user("ann", &[water(6), fish()]);
    s.tick_to(s.at(1, 0, 0));
    // Wednesday: all six eligible.
    let out = s.tick_to(s.at(1, 20, 0));
    assert_eq!(policies(&out), ["weekly_report", "goal_gap", "midweek_fish"]);
}

#[test]
fn early_low_priority_prompts_leave_room_for_later_ones() {
    let s = Sched::shipped();
    s.user("ann", &[water(6), fish()]);
    s.tick_to(s.at(1, 0, 0));
    // Wednesday with nothing logged: lunch (10) would leave no room for
    // midweek (30), goal gap (40) and the log reminder (20).
    let out = s.tick_to(s.at(1, 23, 59));
    assert_eq!(policies(&out), ["midweek_fish", "goal_gap", "log_reminder"]);
}

#[test]
fn midweek_fish_fires_without_fish() {
    let s = Sched::new(only(PolicyKind::MidweekCheck));
    s.user("ann", &[fish()]);
    let out = s.tick_to(s.at(6, 0, 0));
    assert_eq!(policies(&out), ["midweek_fish"]);
    assert_eq!(out[0].created_at, s.at(1, 17, 30));
    assert_eq!(out[0].local_day.weekday(), Weekday::Wed);
}

#[test]
fn tuesday_salmon_suppresses_midweek_prompt() {
    let s = Sched::new(only(PolicyKind::MidweekCheck));
    let u = s.user("ann", &[fish()]);
    s.eat(&u, "salmon sashimi", MealOccasion::Dinner, s.at(0, 19, 0));
    assert!(s.tick_to(s.at(6, 0, 0)).is_empty());
}

#[test]
fn midweek_needs_a_fish_goal() {
    let s = Sched::new(only(PolicyKind::MidweekCheck));
    s.user("ann", &[water(6)]);
    assert!(s.tick_to(s.at(6, 0, 0)).is_empty());
}

#[test]
fn lunch_push_at_eleven_with_cards() {
    let s = Sched::new(only(PolicyKind::MealRecommendation));
    let u = s.user("ann", &[]);
    s.tick_to(s.at(0, 11, 30));
    s.eat(&u, "laksa", MealOccasion::Lunch, s.at(0, 12, 0));
    let out = s.tick_to(s.at(1, 11, 0));
    let lunch: Vec<_> = out.iter().filter(|p| p.policy_id == "lunch_recommendation").collect();
    assert_eq!(lunch.len(), 1);
    assert_eq!(lunch[0].created_at, s.at(1, 11, 0));
    assert_eq!(lunch[0].payload.cards[0].title, "laksa");
}

#[test]
fn lunch_push_suppressed_when_already_logged() {
    let s = Sched::new(only(PolicyKind::MealRecommendation));
    let u = s.user("ann", &[]);
    s.eat(&u, "laksa", MealOccasion::Lunch, s.at(0, 10, 45));
    let out = s.tick_to(s.at(0, 11, 0));
    assert!(out.is_empty());
}

#[test]
fn new_user_gets_popular_items() {
    let s = Sched::new(only(PolicyKind::MealRecommendation));
    let other = s.user("bob", &[]);
    s.eat(&other, "kaya toast", MealOccasion::Breakfast, s.at(0, 8, 0));
    s.eat(&other, "kaya toast", MealOccasion::Breakfast, s.at(0, 8, 5));
    s.user("ann", &[]);
    let out = s.tick_to(s.at(0, 11, 0));
    let ann: Vec<_> = out.iter().filter(|p| p.user_id.as_str() == "ann").collect();
    assert_eq!(ann.len(), 1);
    assert_eq!(ann[0].payload.cards[0].title, "kaya toast");
}

#[test]
fn log_reminder_depends_on_todays_entries() {
    let s = Sched::new(only(PolicyKind::LogReminder));
    let u = s.user("ann", &[]);
    assert_eq!(s.tick_to(s.at(0, 21, 0)).len(), 1);
    s.eat(&u, "laksa", MealOccasion::Lunch, s.at(1, 12, 0));
    assert!(s.tick_to(s.at(1, 21, 0)).is_empty());
    // Only yesterday's entry: remind again.
    assert_eq!(s.tick_to(s.at(2, 21, 0)).len(), 1);
}

#[test]
fn weekly_report_on_sunday_evening() {
    let s = Sched::new(only(PolicyKind::WeeklyReport));
    let u = s.user("ann", &[fish()]);
    s.eat(&u, "salmon sashimi", MealOccasion::Dinner, s.at(0, 19, 0));
    s.eat(&u, "fish soup", MealOccasion::Lunch, s.at(2, 12, 0));
    let out = s.tick_to(s.at(6, 0, 0));
    assert_eq!(policies(&out), ["weekly_report"]);
    assert!(out[0].payload.text.contains("1 of 1"));
}

#[test]
fn outbox_replays_undelivered_and_expires() {
    let mut c = only(PolicyKind::LogReminder);
    c.outbox_ttl_hours = 36;
    let s = Sched::new(c);
    let u = s.user("ann", &[]);
    s.tick_to(s.at(1, 22, 0));
    let now = s.at(1, 22, 0);
    let pending = s.sched.outbox(&u.user_id, now).unwrap();
    assert_eq!(pending.len(), 2);
    assert!(pending[0].created_at < pending[1].created_at);
    s.sched.mark_delivered(&u.user_id, &pending[1].prompt_id).unwrap();
    assert_eq!(s.sched.outbox(&u.user_id, now).unwrap().len(), 1);
    // Past the TTL the first prompt is dropped too.
    assert!(s.sched.outbox(&u.user_id, s.at(2, 9, 30)).unwrap().is_empty());
    assert!(s.sched.mark_delivered(&u.user_id, "p99999999").is_err());
}

#[test]
fn users_created_later_get_no_backdated_prompts() {
    let s = Sched::new(only(PolicyKind::LogReminder));
    s.env.clock.set(s.at(0, 22, 0));
    s.user("ann", &[]);
    s.env.store.put(Family::Prompts, LAST_TICK_KEY, &s.at(0, 0, 0)).unwrap();
    assert!(s.tick_to(s.at(0, 23, 0)).is_empty());
}

/// A random journal trace: (day, minute of day, kind) events.
fn arb_trace() -> impl Strategy<Value = Vec<(i64, u32, usize)>> {
    prop::collection::vec((0i64..9, 0u32..24 * 60, 0usize..8), 0..30)
}

fn replay(trace: &[(i64, u32, usize)], steps: &[i64]) -> (Vec<String>, Sched) {
    let s = Sched::shipped();
    let users = [s.user("ann", &default_goals()), s.user("bob", &[water(6), fish()])];
    let mut events: Vec<_> = trace.to_vec();
    events.sort();
    let mut ev = events.into_iter().peekable();
    let end = s.at(9, 0, 0);
    let mut now = ts(START);
    let mut i = 0;
    while now < end {
        let next = (now + Duration::minutes(steps[i % steps.len()])).min(end);
        i += 1;
        while let Some(&(d, m, k)) = ev.peek() {
            let at = s.at(d, m / 60, m % 60).max(now);
            if at > next {
                break;
            }
            ev.next();
            // The scheduler runs up to each write, as a live clock would.
            if s.sched.last_tick().unwrap() < Some(at) {
                s.tick_to(at);
            }
            let u = &users[k % 2];
            match k / 2 {
                0 => s.eat(u, "salmon sashimi", MealOccasion::Dinner, at),
                1 => s.eat(u, "apple", MealOccasion::Snack, at),
                2 => s.eat(u, "laksa", MealOccasion::Lunch, at),
                _ => s.drink(u, 2, at),
            }
        }
        s.tick_to(next);
        now = next;
    }
    (s.sched.export_log().unwrap(), s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Tick granularity does not change the prompt log, and no user-day
    /// ever exceeds the cap.
    #[test]
    fn tick_size_does_not_matter(trace in arb_trace(), steps in prop::collection::vec(1i64..600, 1..5)) {
        let (fine, s) = replay(&trace, &steps);
        let (coarse, _) = replay(&trace, &[24 * 60]);
        prop_assert_eq!(&fine, &coarse);
        let mut per_day = std::collections::BTreeMap::new();
        for u in ["ann", "bob"] {
            for p in s.sched.prompts_for(&UserId::new(u)).unwrap() {
                *per_day.entry((u, p.local_day)).or_insert(0usize) += 1;
            }
        }
        prop_assert!(per_day.values().all(|n| *n <= 3));
    }
}
