import os

from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=50, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))
