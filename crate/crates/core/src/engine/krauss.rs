//! Krauss car-following.
//!
//! With reaction time `tau` and braking rate `b`, a follower at speed `v`
//! behind a leader at speed `v_l` and gap `g` is safe if, after reacting,
//! it can stop within the distance the leader needs to stop plus the gap:
//!
//! `v * tau + v^2 / (2b) <= g + v_l^2 / (2b)`
//!
//! Linearizing around the mean speed `(v + v_l) / 2` gives the closed form
//! `v_safe = v_l + (g - v_l * tau) / ((v + v_l) / (2b) + tau)`.

/// Largest speed that keeps the follower able to stop behind the leader.
pub fn safe_speed(v_follower: f64, v_leader: f64, gap: f64, decel: f64, tau: f64) -> f64 {
    let gap = gap.max(0.0);
    let denom = (v_follower + v_leader) / (2.0 * decel) + tau;
    if denom <= 1e-9 {
        return if gap > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (v_leader + (gap - v_leader * tau) / denom).max(0.0)
}

pub fn desired_speed(speed_factor: f64, speed_limit: f64) -> f64 {
    speed_factor * speed_limit
}
