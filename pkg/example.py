import logging

from transferability.domains import example1_pair
from transferability.hypotheses import LossKind, ThresholdClassifier, risk
from transferability.measures import check_tv_sandwich, symmetric_threshold_family, target_bound, transfer_measures

logging.basicConfig(level=logging.DEBUG)

# Two domains that look nothing alike but share their best thresholds
source, target = example1_pair(intensity=0.1)
delta = 0.008
gamma = symmetric_threshold_family(delta, scale=0.8)

report = transfer_measures(source, target, gamma)
print(f"Symmetric transfer measure over |rho| <= {delta / 0.8}: {report.symmetric}")
print(f"Best source / target risks: {report.eps_star_source} / {report.eps_star_target}")

sandwich = check_tv_sandwich(source, target)
print(f"Realizable measure over all classifiers: {sandwich.realizable_all}, total variation: {sandwich.tv}")

h = ThresholdClassifier(rho=0.005)
print(f"Source risk of h: {risk(h, source, LossKind.zero_one())}")
certificate = target_bound(source, target, gamma, h)
print(f"Target risk {certificate.target_risk} <= bound {certificate.bound_one_sided}: {certificate.holds}")
