import sys

from CommunityMembershipHiding.cli import main

sys.exit(main())
