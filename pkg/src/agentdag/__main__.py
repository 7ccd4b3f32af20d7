from agentdag.harness.cli import main

raise SystemExit(main())
