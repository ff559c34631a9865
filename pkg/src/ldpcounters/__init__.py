"""Locally private repeated collection of counter data.

Client side: 1-bit mean and d-bit histogram randomizers, alpha-point
rounding with permanent memoization, and output perturbation. Collector
side: mergeable aggregates, unbiased estimators and their error radii.
"""

from ldpcounters.collector import (Estimate, HistAggregate, HistEstimate, MeanAggregate,
                                   hist_error_bound, hist_estimate, mean_error_bound,
                                   mean_estimate, merge)
from ldpcounters.errors import (CorruptStateError, DomainError, ParameterError,
                                StateFormatError, StateVersionError, TraceFormatError)
from ldpcounters.mechanisms import (HistConfig, HistResponse, MeanConfig, PrivacyParams,
                                    d_bit_flip_buckets, d_bit_flip_respond,
                                    laplace_mean_respond, one_bit_mean_prob,
                                    one_bit_mean_respond)
from ldpcounters.memoization import (HistClientState, MeanClientState, alpha_round,
                                     hist_respond_memoized, init_hist_state, init_mean_state,
                                     load_state, mean_respond_memoized, save_state)
from ldpcounters.patterns import (BehaviorPattern, PatternSupport, pattern_ldp_exponent,
                                  pattern_of, support_distribution)
from ldpcounters.perturbation import (EffectiveBudget, effective_budget, effective_epsilon,
                                      hamming_ratio_bound, multiapp_epsilon, perturb_bit)

__version__ = "0.1.0"
