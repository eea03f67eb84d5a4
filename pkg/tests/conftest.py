import os
import sys
from datetime import timedelta

from hypothesis import settings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

settings.register_profile(
    "default", max_examples=25, deadline=timedelta(seconds=30)
)
settings.load_profile("default")
