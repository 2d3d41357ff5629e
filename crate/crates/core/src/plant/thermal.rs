//! Hotend thermal model: a first-order heater with a PI(D) duty controller.
//!
//! Each step integrates
//! `temp += dt * (k_heat * duty - k_loss * (temp - ambient))`
//! where `duty` comes from a PID loop with conditional integration: the
//! integral only accumulates while the output is not saturated in the
//! direction of the error, which keeps a cold-start ramp from winding up
//! hundreds of degree-seconds of overshoot.
//!
//! With the default gains the hotend settles into 200 +/- 2 degrees C about
//! 114 seconds after a cold-start command, holds roughly 44% duty there with
//! the part fan off, and physically cannot hold 200 with the fan on (the
//! full-duty ceiling drops to about 158).

/// Model and controller constants. Temperatures in degrees Celsius, time in
/// seconds, duty dimensionless in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalParams {
    /// Heating rate at full duty, degrees per second.
    pub k_heat: f64,
    /// Loss coefficient with the part-cooling fan off, per second.
    pub k_loss_fan_off: f64,
    /// Loss coefficient with the fan on, per second.
    pub k_loss_fan_on: f64,
    pub ambient_c: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric clamp on the integral accumulator, degree-seconds.
    pub integral_limit: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            k_heat: 4.0,
            k_loss_fan_off: 0.01,
            k_loss_fan_on: 0.03,
            ambient_c: 25.0,
            kp: 0.05,
            ki: 0.001,
            kd: 0.0,
            integral_limit: 1_000.0,
        }
    }
}

/// Full thermal state of the hotend, controller memory included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HotendState {
    pub temp_c: f64,
    pub target_c: f64,
    pub fan_on: bool,
    /// Heater duty applied during the most recent step.
    pub duty: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub params: ThermalParams,
}

impl HotendState {
    /// Powered-on-at-ambient state with the heater idle.
    #[must_use]
    pub fn new(params: ThermalParams) -> HotendState {
        HotendState {
            temp_c: params.ambient_c,
            target_c: 0.0,
            fan_on: false,
            duty: 0.0,
            integral: 0.0,
            prev_error: 0.0,
            params,
        }
    }
}

/// One controller-plus-plant step of `dt_secs`. Pure: the caller owns when
/// and how often to integrate. Within a step the duty is computed from the
/// previous integral, then the integral accumulates (unless saturated), then
/// the temperature moves.
#[must_use]
pub fn thermal_step(state: &HotendState, dt_secs: f64) -> HotendState {
    let p = &state.params;
    let error = state.target_c - state.temp_c;
    let derivative = if dt_secs > 0.0 {
        (error - state.prev_error) / dt_secs
    } else {
        0.0
    };
    let raw = p.kp * error + p.ki * state.integral + p.kd * derivative;
    let duty = raw.clamp(0.0, 1.0);

    let saturated_high = raw > 1.0 && error > 0.0;
    let saturated_low = raw < 0.0 && error < 0.0;
    let mut integral = state.integral;
    if !(saturated_high || saturated_low) {
        integral = (integral + error * dt_secs).clamp(-p.integral_limit, p.integral_limit);
    }

    let k_loss = if state.fan_on {
        p.k_loss_fan_on
    } else {
        p.k_loss_fan_off
    };
    let temp_c = state.temp_c + dt_secs * (p.k_heat * duty - k_loss * (state.temp_c - p.ambient_c));

    HotendState {
        temp_c,
        duty,
        integral,
        prev_error: error,
        ..*state
    }
}

/// Steady-state duty needed to hold `target_c` with the given loss
/// coefficient: at equilibrium the heater exactly replaces losses.
#[must_use]
pub fn steady_duty(params: &ThermalParams, target_c: f64, fan_on: bool) -> f64 {
    let k_loss = if fan_on {
        params.k_loss_fan_on
    } else {
        params.k_loss_fan_off
    };
    k_loss * (target_c - params.ambient_c) / params.k_heat
}

/// Hottest temperature the heater can hold at full duty.
#[must_use]
pub fn full_duty_ceiling(params: &ThermalParams, fan_on: bool) -> f64 {
    let k_loss = if fan_on {
        params.k_loss_fan_on
    } else {
        params.k_loss_fan_off
    };
    params.ambient_c + params.k_heat / k_loss
}
