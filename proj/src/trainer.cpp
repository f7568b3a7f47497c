namespace vast {}
