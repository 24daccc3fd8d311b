from sgnn.cli import main

raise SystemExit(main())
