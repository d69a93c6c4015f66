import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")
